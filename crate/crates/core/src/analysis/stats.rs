use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Label arrangements up to which `PValueMethod::Auto` enumerates exactly.
/// Covers every split of nine or fewer observations (9! = 362 880).
pub const EXACT_LIMIT: u64 = 500_000;

/// How the Kruskal–Wallis p-value is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Exact when the number of arrangements is at most [`EXACT_LIMIT`],
    /// chi-squared otherwise.
    #[default]
    Auto,
    /// Enumerate every assignment of the pooled ranks to groups.
    Exact,
    /// Chi-squared survival function with `k - 1` degrees of freedom.
    Asymptotic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    /// Tie-corrected H statistic.
    pub h: f64,
    pub p: f64,
    pub df: usize,
    pub exact: bool,
}

/// Pooled ranks (ties get their average rank), grouped like the input, and
/// the tie term `sum(t^3 - t)`.
pub fn pooled_ranks(groups: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let mut all: Vec<(f64, usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, v)| v.iter().enumerate().map(move |(i, &x)| (x, g, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut ties = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &(_, g, k) in &all[i..=j] {
            ranks[g][k] = avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

fn validate_groups(groups: &[Vec<f64>]) -> Result<usize> {
    if groups.len() < 2 {
        return Err(Error::invalid("kruskal_wallis", "need at least two groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("kruskal_wallis", "every group needs at least one observation"));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("kruskal_wallis: observations must be finite".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let first = groups[0][0];
    if groups.iter().flatten().all(|&v| v == first) {
        return Err(Error::Undefined("kruskal_wallis: all observations are identical".into()));
    }
    Ok(n)
}

fn h_from_rank_sums(sums: &[f64], sizes: &[usize], n: usize, tie_factor: f64) -> f64 {
    let nf = n as f64;
    let s: f64 = sums.iter().zip(sizes).map(|(r, &m)| r * r / m as f64).sum();
    (12.0 / (nf * (nf + 1.0)) * s - 3.0 * (nf + 1.0)) / tie_factor
}

/// Number of distinct label arrangements, `N! / prod(n_i!)`, saturating.
pub fn arrangement_count(sizes: &[usize]) -> u64 {
    let mut total: u64 = 1;
    let mut placed: u64 = 0;
    for &m in sizes {
        for k in 1..=m as u64 {
            placed += 1;
            // running product of binomial coefficients stays integral
            total = match total.checked_mul(placed) {
                Some(v) => v / k,
                None => return u64::MAX,
            };
        }
    }
    total
}

fn exact_p(ranks: &[f64], sizes: &[usize], n: usize, tie_factor: f64, h_obs: f64) -> f64 {
    fn walk(
        pos: usize,
        ranks: &[f64],
        left: &mut [usize],
        sums: &mut [f64],
        visit: &mut dyn FnMut(&[f64]),
    ) {
        if pos == ranks.len() {
            visit(sums);
            return;
        }
        for g in 0..left.len() {
            if left[g] > 0 {
                left[g] -= 1;
                sums[g] += ranks[pos];
                walk(pos + 1, ranks, left, sums, visit);
                sums[g] -= ranks[pos];
                left[g] += 1;
            }
        }
    }
    let tol = 1e-9 * h_obs.abs().max(1.0);
    let (mut hits, mut total) = (0u64, 0u64);
    let mut left = sizes.to_vec();
    let mut sums = vec![0.0; sizes.len()];
    walk(0, ranks, &mut left, &mut sums, &mut |s| {
        total += 1;
        if h_from_rank_sums(s, sizes, n, tie_factor) >= h_obs - tol {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

/// Kruskal–Wallis rank test across `groups`.
pub fn kruskal_wallis(groups: &[Vec<f64>], method: PValueMethod) -> Result<KruskalWallis> {
    let n = validate_groups(groups)?;
    let (ranks, ties) = pooled_ranks(groups);
    let nf = n as f64;
    let tie_factor = 1.0 - ties / (nf * nf * nf - nf);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let sums: Vec<f64> = ranks.iter().map(|r| r.iter().sum()).collect();
    let h = h_from_rank_sums(&sums, &sizes, n, tie_factor).max(0.0);
    let df = groups.len() - 1;
    let exact = match method {
        PValueMethod::Exact => true,
        PValueMethod::Asymptotic => false,
        PValueMethod::Auto => arrangement_count(&sizes) <= EXACT_LIMIT,
    };
    let p = if exact {
        let flat: Vec<f64> = ranks.concat();
        exact_p(&flat, &sizes, n, tie_factor, h)
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        chi.sf(h)
    };
    Ok(KruskalWallis {
        h,
        p: p.clamp(0.0, 1.0),
        df,
        exact,
    })
}

/// Multiple-comparison correction for pairwise p-values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    #[default]
    None,
    Bonferroni,
    Holm,
}

/// Pairwise comparison outcome between named models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub names: Vec<String>,
    pub z: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub significant: Vec<Vec<bool>>,
    pub alpha: f64,
    pub adjustment: Adjustment,
}

impl SignificanceMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Square CSV of p-values with a header of model names.
    pub fn p_csv(&self) -> String {
        let mut out = format!("model,{}\n", self.names.join(","));
        for (name, row) in self.names.iter().zip(&self.p) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }

    /// Long-format CSV: one row per unordered pair.
    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("model_a,model_b,z,p,significant\n");
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.names[i], self.names[j], self.z[i][j], self.p[i][j], self.significant[i][j]
                ));
            }
        }
        out
    }
}

fn adjust(raw: &[f64], method: Adjustment) -> Vec<f64> {
    let m = raw.len() as f64;
    match method {
        Adjustment::None => raw.to_vec(),
        Adjustment::Bonferroni => raw.iter().map(|p| (p * m).min(1.0)).collect(),
        Adjustment::Holm => {
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
            let mut out = vec![0.0; raw.len()];
            let mut running: f64 = 0.0;
            for (k, &i) in order.iter().enumerate() {
                running = running.max(((m - k as f64) * raw[i]).min(1.0));
                out[i] = running;
            }
            out
        }
    }
}

/// Dunn's pairwise test on mean ranks with the tie-corrected variance.
/// Two-sided normal p-values, optionally adjusted, flagged at `alpha`.
pub fn dunn_posthoc(groups: &[Vec<f64>], names: &[String], alpha: f64, adjustment: Adjustment) -> Result<SignificanceMatrix> {
    let n = validate_groups(groups)?;
    if names.len() != groups.len() {
        return Err(Error::invalid("dunn_posthoc", "one name per group is required"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("dunn_posthoc", format!("alpha {alpha} must lie in (0, 1)")));
    }
    let (ranks, ties) = pooled_ranks(groups);
    let nf = n as f64;
    let base = nf * (nf + 1.0) / 12.0 - ties / (12.0 * (nf - 1.0));
    let mean_rank: Vec<f64> = ranks.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let normal = Normal::standard();
    let k = groups.len();
    let mut z = vec![vec![0.0; k]; k];
    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let se = (base * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let zij = (mean_rank[i] - mean_rank[j]) / se;
            z[i][j] = zij;
            z[j][i] = -zij;
            pairs.push((i, j));
            raw.push((2.0 * normal.sf(zij.abs())).min(1.0));
        }
    }
    let adjusted = adjust(&raw, adjustment);
    let mut p = vec![vec![1.0; k]; k];
    let mut significant = vec![vec![false; k]; k];
    for (&(i, j), &pij) in pairs.iter().zip(&adjusted) {
        p[i][j] = pij;
        p[j][i] = pij;
        significant[i][j] = pij < alpha;
        significant[j][i] = pij < alpha;
    }
    Ok(SignificanceMatrix {
        names: names.to_vec(),
        z,
        p,
        significant,
        alpha,
        adjustment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn separated_triplets() {
        let groups = [g(&[1.0, 2.0, 3.0]), g(&[4.0, 5.0, 6.0]), g(&[7.0, 8.0, 9.0])];
        let r = kruskal_wallis(&groups, PValueMethod::Asymptotic).unwrap();
        assert!((r.h - 7.2).abs() < 1e-12);
        assert!((r.p - 0.0273).abs() < 5e-5);
        let e = kruskal_wallis(&groups, PValueMethod::Exact).unwrap();
        assert!((e.p - 6.0 / 1680.0).abs() < 1e-12);
        assert!(kruskal_wallis(&groups, PValueMethod::Auto).unwrap().exact);
    }

    #[test]
    fn identical_groups_give_zero_h() {
        let groups = [g(&[1.0, 4.0, 2.0]), g(&[4.0, 2.0, 1.0]), g(&[2.0, 1.0, 4.0])];
        let r = kruskal_wallis(&groups, PValueMethod::Asymptotic).unwrap();
        assert!(r.h.abs() < 1e-12);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_keeps_h() {
        let groups = [g(&[0.3, 1.2, 2.2]), g(&[0.9, 4.0]), g(&[3.1, 5.5, 0.1])];
        let exp: Vec<Vec<f64>> = groups.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect();
        let a = kruskal_wallis(&groups, PValueMethod::Auto).unwrap();
        let b = kruskal_wallis(&exp, PValueMethod::Auto).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            kruskal_wallis(&[g(&[2.0, 2.0]), g(&[2.0])], PValueMethod::Auto),
            Err(Error::Undefined(_))
        ));
        assert!(kruskal_wallis(&[g(&[1.0, 2.0, 3.0])], PValueMethod::Auto).is_err());
        assert!(kruskal_wallis(&[g(&[1.0]), g(&[])], PValueMethod::Auto).is_err());
    }

    #[test]
    fn two_singletons_are_exact() {
        let kw = kruskal_wallis(&[g(&[1.0]), g(&[2.0])], PValueMethod::Auto).unwrap();
        assert!(kw.exact);
        assert!((kw.h - 1.0).abs() < 1e-12);
        assert_eq!(kw.p, 1.0);
    }

    #[test]
    fn ties_use_average_ranks() {
        let (r, ties) = pooled_ranks(&[g(&[1.0, 2.0]), g(&[2.0, 3.0])]);
        assert_eq!(r, vec![vec![1.0, 2.5], vec![2.5, 4.0]]);
        assert_eq!(ties, 6.0);
    }

    #[test]
    fn arrangement_counts() {
        assert_eq!(arrangement_count(&[3, 3, 3]), 1680);
        assert_eq!(arrangement_count(&[5, 5, 5]), 756_756);
        assert_eq!(arrangement_count(&[2, 1]), 3);
    }

    #[test]
    fn dunn_identical_groups() {
        let groups = [g(&[1.0, 2.0, 3.0]), g(&[3.0, 1.0, 2.0])];
        let m = dunn_posthoc(&groups, &names(2), 0.05, Adjustment::None).unwrap();
        assert_eq!(m.p[0][1], 1.0);
        assert!(!m.significant[0][1]);
    }

    #[test]
    fn dunn_separated_and_interleaved() {
        let a = g(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = g(&[101.0, 102.0, 103.0, 104.0, 105.0]);
        let c = g(&[1.1, 2.1, 3.1, 4.1, 5.1]);
        let m = dunn_posthoc(&[a, b, c], &names(3), 0.05, Adjustment::None).unwrap();
        assert!(m.significant[0][1]);
        assert!(!m.significant[0][2]);
        for i in 0..3 {
            assert_eq!(m.p[i][i], 1.0);
            assert!(!m.significant[i][i]);
            for j in 0..3 {
                assert_eq!(m.p[i][j], m.p[j][i]);
            }
        }
    }

    #[test]
    fn dunn_is_stable_under_relabeling() {
        let groups = [g(&[1.0, 2.5, 3.0]), g(&[7.0, 8.0, 9.5]), g(&[2.0, 4.0, 6.0])];
        let m = dunn_posthoc(&groups, &names(3), 0.05, Adjustment::None).unwrap();
        let perm = [2, 0, 1];
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| groups[i].clone()).collect();
        let s = dunn_posthoc(&shuffled, &names(3), 0.05, Adjustment::None).unwrap();
        for (a, &i) in perm.iter().enumerate() {
            for (b, &j) in perm.iter().enumerate() {
                assert!((s.p[a][b] - m.p[i][j]).abs() < 1e-12);
                assert_eq!(s.significant[a][b], m.significant[i][j]);
            }
        }
    }

    #[test]
    fn adjustments() {
        let raw = [0.01, 0.04, 0.03];
        assert_eq!(adjust(&raw, Adjustment::Bonferroni), vec![0.03, 0.12, 0.09]);
        let holm = adjust(&raw, Adjustment::Holm);
        assert!((holm[0] - 0.03).abs() < 1e-15);
        assert!((holm[2] - 0.06).abs() < 1e-15);
        assert!((holm[1] - 0.06).abs() < 1e-15);
    }
}
