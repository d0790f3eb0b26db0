//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false`, so the report is printed on every run.

use std::fs;
use std::time::Instant;

use mdlab::experiments::{run_sweep, run_sweep_limited, Engine, McSettings, SweepConfig, XRule};
use mdlab::mc::{simulate, Method, TailEstimate};
use mdlab::normal::{mills_lower, mills_upper, normal_tail};
use mdlab::oracle::{enumerate_exact, lattice_dp_max};
use mdlab::theory::{self, SequenceSpec};
use mdlab::DistributionSpec;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rad(n: u64) -> SequenceSpec {
    SequenceSpec::iid(DistributionSpec::Rademacher { scale: 1.0 }, n).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const GRID: [u64; 4] = [256, 1024, 4096, 16384];

fn dp_ratios(x: f64) -> Result<Vec<(u64, f64, f64)>, String> {
    let tail = normal_tail(x).map_err(|e| e.to_string())?;
    GRID.iter()
        .map(|&n| {
            let r = lattice_dp_max(n, x, 1.0).map_err(|e| e.to_string())?;
            Ok((n, r.p_max / tail, r.p_sum / tail))
        })
        .collect()
}

fn ratio_to_two() -> Outcome {
    let start = Instant::now();
    let rows = dp_ratios(1.5)?;
    let secs = start.elapsed().as_secs_f64();
    let devs: Vec<f64> = rows.iter().map(|r| (r.1 - 2.0).abs()).collect();
    ensure(devs.windows(2).all(|w| w[1] < w[0]), || {
        format!("|ratio_max - 2| not decreasing: {devs:?}")
    })?;
    let last = *devs.last().unwrap();
    ensure(last <= 0.05, || format!("final deviation {last} > 0.05"))?;
    ensure(secs <= 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("deviations {devs:.4?}, {secs:.2} s"))
}

fn ratio_to_one() -> Outcome {
    let rows = dp_ratios(1.5)?;
    let devs: Vec<f64> = rows.iter().map(|r| (r.2 - 1.0).abs()).collect();
    let last = *devs.last().unwrap();
    ensure(last <= 0.05, || {
        format!("|ratio_sum - 1| = {last} > 0.05 at n = 16384")
    })?;
    Ok(format!("deviations {devs:.4?}"))
}

fn cross_validation() -> Outcome {
    let mut worst = 0.0f64;
    for n in 1..=20u64 {
        for x in [0.5, 1.0, 1.5] {
            let e = enumerate_exact(&rad(n), x).map_err(|e| e.to_string())?;
            let d = lattice_dp_max(n, x, 1.0).map_err(|e| e.to_string())?;
            worst = worst
                .max((e.p_max - d.p_max).abs())
                .max((e.p_sum - d.p_sum).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("enumeration vs DP differ by {worst:e}")
    })?;
    let seq = SequenceSpec::iid(DistributionSpec::TwoPoint { a: 2.0, b: 1.0 }, 12).unwrap();
    let x = 1.0;
    let exact = enumerate_exact(&seq, x).map_err(|e| e.to_string())?;
    let (m, s) = simulate(&seq, x, 1_000_000, 2024, Method::Naive, 4).map_err(|e| e.to_string())?;
    let zm = (m.p_hat - exact.p_max) / m.stderr;
    let zs = (s.p_hat - exact.p_sum) / s.stderr;
    ensure(zm.abs() <= 4.0 && zs.abs() <= 4.0, || {
        format!("two-point MC off: z_max {zm:.2}, z_sum {zs:.2}")
    })?;
    Ok(format!(
        "max |enum - dp| = {worst:e}; two-point z = {zm:.2} (max), {zs:.2} (sum)"
    ))
}

fn importance_sampling() -> Outcome {
    let seq = rad(64);
    let exact = lattice_dp_max(64, 2.0, 1.0).map_err(|e| e.to_string())?;
    let mut pooled: Option<TailEstimate> = None;
    for seed in 0..20u64 {
        let (m, _) = simulate(&seq, 2.0, 100_000, 1000 + seed, Method::Tilted, 4)
            .map_err(|e| e.to_string())?;
        pooled = Some(match pooled {
            None => m,
            Some(p) => p.merge(&m).map_err(|e| e.to_string())?,
        });
    }
    let p = pooled.unwrap();
    let z = (p.p_hat - exact.p_max) / p.stderr;
    ensure(z.abs() <= 4.0, || {
        format!("pooled tilted estimate z = {z:.2}")
    })?;
    let seq = rad(256);
    let (naive, _) =
        simulate(&seq, 2.5, 100_000, 7, Method::Naive, 4).map_err(|e| e.to_string())?;
    let (tilted, _) =
        simulate(&seq, 2.5, 100_000, 7, Method::Tilted, 4).map_err(|e| e.to_string())?;
    ensure(tilted.stderr < naive.stderr, || {
        format!(
            "tilted stderr {:e} not below naive {:e}",
            tilted.stderr, naive.stderr
        )
    })?;
    Ok(format!(
        "pooled z = {z:.2}; stderr tilted {:.3e} vs naive {:.3e}",
        tilted.stderr, naive.stderr
    ))
}

fn tail_sandwich() -> Outcome {
    for i in 0..400 {
        let x = 1.0 + 39.0 * f64::from(i) / 399.0;
        let q = normal_tail(x).map_err(|e| e.to_string())?;
        let (lo, hi) = (mills_lower(x), mills_upper(x));
        ensure(lo <= q && q <= hi, || {
            format!("x = {x}: {lo:e} <= {q:e} <= {hi:e} fails")
        })?;
    }
    Ok("400 points on [1, 40]".into())
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn theory_invariants() -> Outcome {
    let dists = [
        DistributionSpec::Rademacher { scale: 1.0 },
        DistributionSpec::TwoPoint { a: 2.0, b: 1.0 },
        DistributionSpec::Uniform {
            half_width: 3f64.sqrt(),
        },
        DistributionSpec::CenteredExponential { rate: 1.0 },
        DistributionSpec::StudentT { nu: 5.0 },
    ];
    let err = |e: mdlab::Error| e.to_string();

    // scale invariance
    let mut checked = 0;
    for d in dists {
        let bases = [
            SequenceSpec::iid(d, 500).unwrap(),
            SequenceSpec::scaled(d, (1..=300).map(|j| 1.0 + (j % 7) as f64 / 3.0).collect())
                .unwrap(),
        ];
        for base in &bases {
            for x in [1.5, 4.0, 9.0] {
                let q0 = theory::compute_quantities(base, x, 1.0, 1.0).map_err(err)?;
                for c in [1e-3, 1.0, 1e3] {
                    let q =
                        theory::compute_quantities(&base.rescaled(c).map_err(err)?, x, 1.0, 1.0)
                            .map_err(err)?;
                    ensure(
                        close(q.delta_nx, q0.delta_nx)
                            && close(q.dnr, q0.dnr)
                            && q.n0 == q0.n0
                            && close(q.epsilon, q0.epsilon),
                        || format!("{d} x={x} c={c}: {q:?} vs {q0:?}"),
                    )?;
                    checked += 1;
                }
            }
        }
    }

    // d_{n,1} = n^{1/6} for unit second and third absolute moments
    for n in [1u64, 10, 64, 1000, 1 << 20, 1 << 40] {
        let d = theory::dnr(&rad(n), 1.0).map_err(err)?;
        let want = (n as f64).powf(1.0 / 6.0);
        ensure((d / want - 1.0).abs() <= 1e-12, || {
            format!("n={n}: d = {d}, n^(1/6) = {want}")
        })?;
    }

    // truncation-mass chain wherever both regime flags hold
    let mut regime = 0;
    for d in dists {
        for k in (10..=63).step_by(3) {
            let seq = SequenceSpec::iid(d, 1u64 << k).unwrap();
            for x in [1.5, 2.0, 3.0] {
                for delta in [1.0, 3.0] {
                    let q = theory::compute_quantities(&seq, x, 1.0, delta).map_err(err)?;
                    if q.a0_ok && q.bor_ok {
                        let c = theory::truncation_chain(&seq, x, &q).map_err(err)?;
                        ensure(c.holds(), || format!("{d} n=2^{k} x={x} δ={delta}: {c:?}"))?;
                        regime += 1;
                    }
                }
            }
        }
    }
    ensure(regime > 0, || {
        "no instance satisfies both regime flags".into()
    })?;

    // block count bound under the premise
    let mut premised = 0;
    for d in dists {
        let seqs = [
            SequenceSpec::iid(d, 100_000).unwrap(),
            SequenceSpec::scaled(
                d,
                (1..=50_000).map(|j| 0.5 + (j % 11) as f64 / 10.0).collect(),
            )
            .unwrap(),
        ];
        for seq in &seqs {
            for x in [2.0, 3.0, 5.0] {
                let q = theory::compute_quantities(seq, x, 1.0, 1.0).map_err(err)?;
                let b = theory::build_blocks(seq, x, q.epsilon).map_err(err)?;
                if b.premise_holds {
                    ensure(b.count() as f64 <= b.count_bound, || {
                        format!("{d} x={x}: T = {}", b.count())
                    })?;
                    premised += 1;
                }
            }
        }
    }
    ensure(premised > 0, || {
        "no instance satisfies the block premise".into()
    })?;
    Ok(format!(
        "{checked} scale checks, {regime} regime instances, {premised} block instances"
    ))
}

fn repro_config(dir: &std::path::Path, name: &str, workers: usize) -> SweepConfig {
    SweepConfig {
        dist: DistributionSpec::Uniform {
            half_width: 3f64.sqrt(),
        },
        n_grid: vec![16, 32, 64, 128],
        x_rule: XRule::NSixth { c: vec![0.5, 1.0] },
        r: 1.0,
        delta: 1.0,
        tau: 1.0,
        a_const: 1.0,
        engine: Engine::Mc(McSettings {
            method: Method::Naive,
            samples: 20_000,
        }),
        seed: 99,
        output: dir.join(name).join("sweep.csv"),
        workers,
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: mdlab::Error| e.to_string();
    let mut csvs = Vec::new();
    for w in [1, 2, 8] {
        let cfg = repro_config(dir.path(), &format!("w{w}"), w);
        run_sweep(&cfg).map_err(err)?;
        csvs.push(fs::read(&cfg.output).map_err(|e| e.to_string())?);
    }
    ensure(csvs.iter().all(|c| *c == csvs[0]), || {
        "worker counts produce different CSVs".into()
    })?;

    // stop after three rows, leave a torn line as a crash would, resume
    let cfg = repro_config(dir.path(), "resumed", 2);
    run_sweep_limited(&cfg, Some(3)).map_err(err)?;
    {
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&cfg.output)
            .map_err(|e| e.to_string())?;
        f.write_all(b"32,1.78").map_err(|e| e.to_string())?;
    }
    let out = run_sweep(&cfg).map_err(err)?;
    let resumed = fs::read(&cfg.output).map_err(|e| e.to_string())?;
    ensure(resumed == csvs[0], || {
        "resumed sweep differs from uninterrupted sweep".into()
    })?;
    ensure(out.resumed_from == 3, || {
        format!("resumed from row {}", out.resumed_from)
    })?;
    Ok(format!(
        "{} bytes identical across workers 1/2/8 and after resume",
        csvs[0].len()
    ))
}

fn conjecture_probe() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: mdlab::Error| e.to_string();
    let mut summary = Vec::new();
    for (label, dist) in [
        ("rademacher", DistributionSpec::Rademacher { scale: 1.0 }),
        (
            "uniform",
            DistributionSpec::Uniform {
                half_width: 3f64.sqrt(),
            },
        ),
    ] {
        let runs: Vec<Vec<mdlab::RatioRow>> = [5u64, 6]
            .iter()
            .map(|&seed| {
                let cfg = SweepConfig {
                    dist,
                    n_grid: vec![64, 256, 1024],
                    x_rule: XRule::NSixth { c: vec![0.5, 1.0] },
                    r: 1.0,
                    delta: 1.0,
                    tau: 1.0,
                    a_const: 1.0,
                    engine: Engine::Mc(McSettings {
                        method: Method::Naive,
                        samples: 40_000,
                    }),
                    seed,
                    output: dir.path().join(format!("{label}-{seed}.csv")),
                    workers: 4,
                };
                run_sweep(&cfg).map(|o| o.rows).map_err(err)
            })
            .collect::<Result<_, _>>()?;
        let (a, b) = (&runs[0], &runs[1]);
        for (ra, rb) in a.iter().zip(b) {
            ensure(ra.probe.is_finite() && rb.probe.is_finite(), || {
                format!("{label} n={} x={}: probe not finite", ra.n, ra.x)
            })?;
            // the probe is an affine function of ratio_max, so compare on
            // the ratio scale against the two interval widths
            let widths = (ra.ci_high - ra.ci_low) + (rb.ci_high - rb.ci_low);
            ensure((ra.ratio_max - rb.ratio_max).abs() <= widths, || {
                format!(
                    "{label} n={} x={}: seeds disagree beyond CI widths",
                    ra.n, ra.x
                )
            })?;
        }
        let probes: Vec<String> = a.iter().map(|r| format!("{:.3}", r.probe)).collect();
        summary.push(format!("{label} [{}]", probes.join(", ")));
    }
    // exact Rademacher rows populate the probe as well
    let cfg = SweepConfig {
        dist: DistributionSpec::Rademacher { scale: 1.0 },
        n_grid: vec![64, 256, 1024, 4096],
        x_rule: XRule::NSixth { c: vec![0.5, 1.0] },
        r: 1.0,
        delta: 1.0,
        tau: 1.0,
        a_const: 1.0,
        engine: Engine::OraclePreferred { fallback: None },
        seed: 1,
        output: dir.path().join("exact.csv"),
        workers: 4,
    };
    let rows = run_sweep(&cfg).map_err(err)?.rows;
    ensure(rows.iter().all(|r| r.probe.is_finite()), || {
        "exact probe not finite".into()
    })?;
    Ok(summary.join("; "))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 ratio_max -> 2 (lattice DP, x = 1.5)", ratio_to_two),
        ("2 ratio_sum -> 1 control", ratio_to_one),
        ("3 oracle cross-validation", cross_validation),
        ("4 importance sampling", importance_sampling),
        ("5 normal-tail sandwich", tail_sandwich),
        ("6 theory invariants", theory_invariants),
        ("7 reproducibility", reproducibility),
        ("8 conjecture probe", conjecture_probe),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
