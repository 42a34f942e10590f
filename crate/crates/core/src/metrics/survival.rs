//! Concordance, Kaplan–Meier estimation, the log-rank test and risk stratification.

use serde::Serialize;

use super::stats::chi2_sf_1df;
use crate::error::{Error, Result};
use crate::objectives::SurvivalLabel;

/// Binary indexed tree over compressed risk ranks.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C over pairs with `tᵢ < tⱼ` and `δᵢ = 1`; tied risks count ½.
pub fn c_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::Shape(format!("{} risks for {} labels", risks.len(), labels.len())));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite risk".into()));
    }
    let n = risks.len();
    let mut sorted: Vec<f64> = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |r: f64| sorted.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));
    let mut bit = Fenwick::new(sorted.len());
    let (mut twice_concordant, mut permissible) = (0u64, 0u64);
    let mut g = 0;
    while g < n {
        let mut e = g;
        while e < n && labels[order[e]].time == labels[order[g]].time {
            e += 1;
        }
        // bit holds every patient with a strictly later time
        let later = g as u64;
        for &i in &order[g..e] {
            if labels[i].event {
                let k = rank(risks[i]);
                let lower = bit.below(k);
                let tied = bit.below(k + 1) - lower;
                twice_concordant += 2 * lower + tied;
                permissible += later;
            }
        }
        for &i in &order[g..e] {
            bit.add(rank(risks[i]));
        }
        g = e;
    }
    if permissible == 0 {
        return Err(Error::Degenerate("no permissible pairs for the concordance index".into()));
    }
    Ok(twice_concordant as f64 / (2 * permissible) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KmCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S(t)` just after each time.
    pub survival: Vec<f64>,
    /// 95% band from Greenwood's variance on the log(−log) scale.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous step function with `S = 1` before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

const Z_95: f64 = 1.959963984540054;

/// Product-limit estimator.
pub fn km_estimate(labels: &[SurvivalLabel]) -> Result<KmCurve> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("Kaplan-Meier needs at least one subject".into()));
    }
    let mut sorted: Vec<SurvivalLabel> = labels.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut curve =
        KmCurve { times: vec![], survival: vec![], lower: vec![], upper: vec![], at_risk: vec![], events: vec![] };
    let (mut s, mut greenwood) = (1.0f64, 0.0f64);
    let mut at_risk = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut j = i;
        let mut d = 0;
        while j < sorted.len() && sorted[j].time == t {
            d += sorted[j].event as usize;
            j += 1;
        }
        if d > 0 {
            let (nf, df) = (at_risk as f64, d as f64);
            s *= 1.0 - df / nf;
            let (lo, hi) = if d < at_risk {
                greenwood += df / (nf * (nf - df));
                let log_s = s.ln();
                let se = greenwood.sqrt() / log_s.abs();
                (s.powf((Z_95 * se).exp()), s.powf((-Z_95 * se).exp()))
            } else {
                (0.0, 0.0)
            };
            curve.times.push(t);
            curve.survival.push(s);
            curve.lower.push(lo.min(s));
            curve.upper.push(hi.max(s));
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRank {
    pub chi2: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group log-rank test (χ² with one degree of freedom).
pub fn log_rank(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("log-rank needs two non-empty groups".into()));
    }
    let mut all: Vec<(f64, bool, bool)> = a.iter().map(|l| (l.time, l.event, true)).collect();
    all.extend(b.iter().map(|l| (l.time, l.event, false)));
    if !all.iter().any(|x| x.1) {
        return Err(Error::NoEvents("log-rank test needs at least one event".into()));
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut n, mut na) = (all.len() as f64, a.len() as f64);
    let (mut obs, mut exp, mut var) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut d, mut da, mut leave_a) = (0.0, 0.0, 0.0);
        while j < all.len() && all[j].0 == all[i].0 {
            let (_, ev, in_a) = all[j];
            if ev {
                d += 1.0;
                if in_a {
                    da += 1.0;
                }
            }
            if in_a {
                leave_a += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            obs += da;
            exp += d * na / n;
            if n > 1.0 {
                var += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
            }
        }
        n -= (j - i) as f64;
        na -= leave_a;
        i = j;
    }
    let chi2 = if var > 0.0 { (obs - exp) * (obs - exp) / var } else { 0.0 };
    Ok(LogRank { chi2, p_value: chi2_sf_1df(chi2), observed_a: obs, expected_a: exp })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median split: strictly above the median is high risk, the rest low.
pub fn stratify_by_risk(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(Error::InvalidArgument("stratification needs at least two risks".into()));
    }
    let m = median(risks);
    Ok(risks.iter().map(|&r| if r > m { RiskGroup::High } else { RiskGroup::Low }).collect())
}
