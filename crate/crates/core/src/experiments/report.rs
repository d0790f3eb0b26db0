use serde::{Deserialize, Serialize};

use super::config::XRule;
use super::sweep::RatioRow;
use crate::error::{Error, Result};
use crate::theory::envelope_prop2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    Flat,
    NonMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u64,
    pub x: f64,
    /// `|ratio_max − 2|`
    pub dev_max: f64,
    /// `|ratio_sum − 1|`
    pub dev_sum: f64,
    /// Half-width of the ratio interval; 0 for oracle rows.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub group: String,
    pub points: Vec<TrajectoryPoint>,
    pub trend_max: Trend,
    pub trend_sum: Trend,
}

/// Largest deviation at one `n` over all groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstDeviation {
    pub n: u64,
    pub dev_max: f64,
    pub x_max: f64,
    pub dev_sum: f64,
    pub x_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub trajectories: Vec<Trajectory>,
    pub worst_by_n: Vec<WorstDeviation>,
    /// Least-squares `C` in `|ratio_max − 2| ≈ C · envelope(x, Δ, δ)` over
    /// rows with `x >= 2`; absent when the envelope takes fewer than two
    /// distinct values.
    pub fitted_c: Option<f64>,
}

/// Classifies a sequence of deviations. Consecutive differences smaller
/// than twice the larger of the two interval half-widths count as noise.
pub fn trend(devs: &[f64], half_widths: &[f64]) -> Trend {
    let slack = |i: usize| 2.0 * half_widths[i].max(half_widths[i + 1]);
    let spread = devs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - devs.iter().copied().fold(f64::INFINITY, f64::min);
    let max_hw = half_widths.iter().copied().fold(0.0, f64::max);
    if devs.len() < 2 || spread <= 2.0 * max_hw {
        return Trend::Flat;
    }
    let down = (0..devs.len() - 1).all(|i| {
        let s = slack(i);
        if s == 0.0 {
            devs[i + 1] < devs[i]
        } else {
            devs[i + 1] <= devs[i] + s
        }
    });
    if down {
        Trend::Decreasing
    } else {
        Trend::NonMonotone
    }
}

/// Summarizes a sweep: per-group trajectories of the deviations from the
/// limits 2 and 1, the worst deviation across groups at each `n` (a
/// finite-grid stand-in for uniformity in `x`), and the fitted envelope
/// constant.
pub fn convergence_report(
    rows: &[RatioRow],
    rule: &XRule,
    r: f64,
    delta: f64,
) -> Result<ConvergenceReport> {
    if rows.len() < 3 {
        return Err(Error::InsufficientRows(format!(
            "need at least 3 rows, got {}",
            rows.len()
        )));
    }
    let groups = rule.groups();
    if !rows.len().is_multiple_of(groups) {
        return Err(Error::InsufficientRows(format!(
            "{} rows do not fill {groups} groups",
            rows.len()
        )));
    }
    let mut trajectories = Vec::with_capacity(groups);
    for g in 0..groups {
        let points: Vec<TrajectoryPoint> = rows
            .iter()
            .skip(g)
            .step_by(groups)
            .map(|row| TrajectoryPoint {
                n: row.n,
                x: row.x,
                dev_max: (row.ratio_max - 2.0).abs(),
                dev_sum: (row.ratio_sum - 1.0).abs(),
                half_width: 0.5 * (row.ci_high - row.ci_low),
            })
            .collect();
        for p in &points {
            let want = rule.xs(p.n, r)[g];
            if want.to_bits() != p.x.to_bits() {
                return Err(Error::InsufficientRows(format!(
                    "row n={} x={} does not follow the x rule",
                    p.n, p.x
                )));
            }
        }
        let hw: Vec<f64> = points.iter().map(|p| p.half_width).collect();
        let dm: Vec<f64> = points.iter().map(|p| p.dev_max).collect();
        let ds: Vec<f64> = points.iter().map(|p| p.dev_sum).collect();
        trajectories.push(Trajectory {
            group: rule.group_label(g),
            trend_max: trend(&dm, &hw),
            trend_sum: trend(&ds, &hw),
            points,
        });
    }

    let worst_by_n = rows
        .chunks(groups)
        .map(|chunk| {
            let dm = chunk.iter().map(|r| ((r.ratio_max - 2.0).abs(), r.x)).fold(
                (f64::NEG_INFINITY, 0.0),
                |a, b| if b.0 > a.0 { b } else { a },
            );
            let ds = chunk.iter().map(|r| ((r.ratio_sum - 1.0).abs(), r.x)).fold(
                (f64::NEG_INFINITY, 0.0),
                |a, b| if b.0 > a.0 { b } else { a },
            );
            WorstDeviation {
                n: chunk[0].n,
                dev_max: dm.0,
                x_max: dm.1,
                dev_sum: ds.0,
                x_sum: ds.1,
            }
        })
        .collect();

    let mut pairs = Vec::new();
    for row in rows.iter().filter(|r| r.x >= 2.0) {
        if let Some(d) = row.delta_nx {
            pairs.push((
                envelope_prop2(row.x, d, delta)?,
                (row.ratio_max - 2.0).abs(),
            ));
        }
    }
    let distinct = pairs
        .iter()
        .any(|&(e, _)| pairs.first().is_some_and(|&(e0, _)| e != e0));
    let fitted_c = if distinct {
        let see: f64 = pairs.iter().map(|(e, _)| e * e).sum();
        let sed: f64 = pairs.iter().map(|(e, d)| e * d).sum();
        Some(sed / see)
    } else {
        None
    };

    Ok(ConvergenceReport {
        trajectories,
        worst_by_n,
        fitted_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: u64, x: f64, ratio_max: f64, hw: f64) -> RatioRow {
        RatioRow {
            n,
            x,
            p_max: 0.0,
            p_sum: 0.0,
            tail: 1.0,
            ratio_max,
            ratio_sum: ratio_max / 2.0,
            ci_low: ratio_max - hw,
            ci_high: ratio_max + hw,
            probe: 0.0,
            delta_nx: Some(0.01),
            dnr: Some(1.0),
            n0: Some(0),
            epsilon: Some(0.1),
            method: "naive".into(),
            samples: Some(1000),
            seed: Some(1),
        }
    }

    #[test]
    fn trend_rules() {
        assert_eq!(trend(&[0.3, 0.2, 0.1], &[0.0; 3]), Trend::Decreasing);
        assert_eq!(trend(&[0.3, 0.3, 0.1], &[0.0; 3]), Trend::NonMonotone);
        assert_eq!(trend(&[0.3, 0.31, 0.1], &[0.01; 3]), Trend::Decreasing);
        assert_eq!(trend(&[0.3, 0.5, 0.1], &[0.01; 3]), Trend::NonMonotone);
        assert_eq!(trend(&[0.2, 0.2, 0.2], &[0.0; 3]), Trend::Flat);
        assert_eq!(trend(&[0.2, 0.25, 0.21], &[0.05; 3]), Trend::Flat);
    }

    #[test]
    fn constant_rows_are_flat_without_fit() {
        let rule = XRule::Explicit { values: vec![3.0] };
        let rows = vec![row(10, 3.0, 1.8, 0.0); 3];
        let rep = convergence_report(&rows, &rule, 1.0, 1.0).unwrap();
        assert_eq!(rep.trajectories[0].trend_max, Trend::Flat);
        assert_eq!(rep.fitted_c, None);
    }

    #[test]
    fn fit_and_worst() {
        let rule = XRule::Explicit {
            values: vec![2.0, 3.0],
        };
        let rows = vec![
            row(10, 2.0, 1.7, 0.0),
            row(10, 3.0, 1.5, 0.0),
            row(20, 2.0, 1.8, 0.0),
            row(20, 3.0, 1.9, 0.0),
        ];
        let rep = convergence_report(&rows, &rule, 1.0, 1.0).unwrap();
        assert!(rep.fitted_c.unwrap() > 0.0);
        assert_eq!(rep.worst_by_n[0].x_max, 3.0);
        assert!((rep.worst_by_n[0].dev_max - 0.5).abs() < 1e-12);
        assert_eq!(rep.worst_by_n[1].x_max, 2.0);
        assert_eq!(rep.trajectories[1].trend_max, Trend::Decreasing);
    }

    #[test]
    fn too_few_rows() {
        let rule = XRule::Explicit { values: vec![1.0] };
        let rows = vec![row(10, 1.0, 1.8, 0.0); 2];
        assert!(matches!(
            convergence_report(&rows, &rule, 1.0, 1.0),
            Err(Error::InsufficientRows(_))
        ));
    }
}
