//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use adleak_core::analysis::{
    advantage_degradation_exact, engagement_output_distribution, expansion_factor, gamma, sc_bounds,
};
use adleak_core::attribute_privacy::Verdict;
use adleak_core::behaviors::BehaviorParams;
use adleak_core::distinguishing::{ab_campaigns, active_ads, run_exec, Backend, GameConfig};
use adleak_core::dp_stats::{
    binomial_test_exact, geometric_noise_pmf, tulap_cdf, tulap_sample, ump_dp_binomial_test, BinomialTable, Side,
    TulapParams,
};
use adleak_core::experiments::{
    csv_string, run_audit, run_param_sweep, run_tv_sweep, CsvRow, ExperimentConfig, ExperimentKind, DEFAULT_BETA,
};
use adleak_core::feature_space::{CorrelatedBernoulliSpec, ExplicitDistribution};
use adleak_core::rng::{seeded, stream};
use num_rational::Ratio;
use rand::Rng;

const SEED: u64 = 20240601;
/// Trials per search point for the sweeps below; the library default is 400.
const SWEEP_TRIALS: u64 = 1000;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    check(t <= limit, format!("took {:.1}s, limit {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let deg = advantage_degradation_exact(Ratio::new(2, 3));
    check(deg == Ratio::new(8, 15), format!("degradation(2/3) = {deg}"))?;
    let g = gamma();
    check((g - 4.0 / 1.5f64.ln()).abs() < 1e-12, format!("gamma = {g}"))?;

    let mut r = seeded(SEED);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 100 {
        attempts += 1;
        check(attempts < 10_000, "could not draw 100 instances with K >= 0")?;
        let l = r.random_range(2..=6);
        let b_test = r.random_range(0..l);
        let pmf = |r: &mut adleak_core::rng::SimRng| {
            let w: Vec<f64> = (0..1usize << l).map(|_| r.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            ExplicitDistribution::new(l, w.into_iter().map(|v| v / s).collect())
        };
        let d0 = pmf(&mut r).map_err(|e| e.to_string())?;
        let d1 = pmf(&mut r).map_err(|e| e.to_string())?;
        let at = r.random_range(0.05..=1.0);
        let atp = at * r.random_range(0.01..0.99);
        let eps = r.random_range(0.05..0.95);
        let ads = active_ads(&ab_campaigns(l, b_test).map_err(|e| e.to_string())?);
        let ex = expansion_factor(&d0, &d1, &ads, at, atp, 1000, eps).map_err(|e| e.to_string())?;
        if ex.K < 0.0 {
            continue;
        }
        accepted += 1;
        let ratio = ex.z / g;
        check(
            ratio >= 1.0 - 1e-12 && ratio < at / atp,
            format!("z/gamma = {ratio} outside [1, {}) at K = {}", at / atp, ex.K),
        )?;
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!("8/15 exact, gamma = {g:.15}, 100 instances ({attempts} drawn)"))
}

fn tv_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::TvSweep, SEED);
    c.trials_per_point = SWEEP_TRIALS;
    c
}

fn sc_of(rows: &[CsvRow], arm: &str) -> Vec<Option<u64>> {
    rows.iter().filter(|r| r.arm == arm).map(|r| r.minimal_n).collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let rows = run_tv_sweep(&tv_config()).map_err(|e| e.to_string())?;
    within(Duration::from_secs(15 * 60), start)?;
    check(rows.len() == 15, format!("{} rows", rows.len()))?;
    let base = sc_of(&rows, "baseline");
    let np = sc_of(&rows, "non_private");
    let p = sc_of(&rows, "private");
    let ordered = (0..5)
        .filter(|&i| matches!((base[i], np[i], p[i]), (Some(a), Some(b), Some(c)) if a <= b && b <= c))
        .count();
    check(ordered as f64 >= 0.9 * 5.0, format!("ordering holds at {ordered}/5 points: {base:?} {np:?} {p:?}"))?;
    for (arm, sc) in [("baseline", &base), ("non_private", &np), ("private", &p)] {
        // Rows are sorted by increasing marginal, hence increasing TV.
        let inversions = sc.windows(2).filter(|w| w[1] > w[0]).count();
        check(inversions <= 1, format!("{arm}: {inversions} inversions in {sc:?}"))?;
    }
    Ok(format!(
        "ordered at {ordered}/5 points; non_private {np:?}; private {p:?}; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn sweep(kind: ExperimentKind) -> Result<Vec<CsvRow>, String> {
    let mut c = ExperimentConfig::new(kind, SEED);
    c.trials_per_point = SWEEP_TRIALS;
    run_param_sweep(&c).map_err(|e| e.to_string())
}

fn series(rows: &[CsvRow], arm: &str) -> Result<Vec<u64>, String> {
    rows.iter()
        .filter(|r| r.arm == arm)
        .map(|r| r.minimal_n.ok_or_else(|| format!("{arm} hit the ceiling at {}", r.param_value)))
        .collect()
}

fn spread(sc: &[u64]) -> f64 {
    *sc.iter().max().unwrap() as f64 / *sc.iter().min().unwrap() as f64
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let eps = sweep(ExperimentKind::EpsilonSweep)?;
    let ae = sweep(ExperimentKind::AlphaESweep)?;
    let at = sweep(ExperimentKind::AlphaTSweep)?;
    within(Duration::from_secs(30 * 60), start)?;
    let eps_sc = series(&eps, "private")?;
    check(eps_sc.windows(2).all(|w| w[0] > w[1]), format!("epsilon sweep not decreasing: {eps_sc:?}"))?;
    let mut detail = format!("epsilon {eps_sc:?}");
    for arm in ["non_private", "private"] {
        let a = series(&ae, arm)?;
        check(a.windows(2).all(|w| w[0] > w[1]), format!("{arm} alpha_e sweep not decreasing: {a:?}"))?;
        let t = series(&at, arm)?;
        check(
            spread(&t) < spread(&a),
            format!("{arm}: alpha_t spread {:.2} not below alpha_e spread {:.2}", spread(&t), spread(&a)),
        )?;
        detail += &format!("; {arm} alpha_e {a:?} alpha_t {t:?}");
    }
    Ok(detail)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    // Expected ad_1 counts from R_b against simulated ecosystems.
    let n = 100_000u64;
    let mut worst: f64 = 0.0;
    for (l, alpha_t) in [(4usize, 1.0), (8, 1.0), (8, 0.5)] {
        let marg: Vec<f64> = (0..l).map(|j| if j == 0 { 0.5 } else { 0.15 }).collect();
        let spec = CorrelatedBernoulliSpec::equicorrelated(marg, 0.16).map_err(|e| e.to_string())?;
        let d0 = spec.materialize().map_err(|e| e.to_string())?;
        let d1 = spec.derive_alternate(0, 0.8).and_then(|s| s.materialize()).map_err(|e| e.to_string())?;
        let params = BehaviorParams::new(alpha_t, 0.05, None).map_err(|e| e.to_string())?;
        let mut cfg = GameConfig::ab(n, d0.clone(), d1.clone(), 0, params.clone()).map_err(|e| e.to_string())?;
        cfg.backend = Backend::Simulate;
        let ads = active_ads(&cfg.campaigns);
        for (b, d) in [(0u8, &d0), (1, &d1)] {
            let mass = engagement_output_distribution(d, &ads, &params).map_err(|e| e.to_string())?.total_mass();
            let report = run_exec(&cfg, b, stream(SEED, (l as u64) << 8 | b as u64)).map_err(|e| e.to_string())?;
            let got = report.get(&cfg.ad_1());
            let mean = n as f64 * mass;
            let z = (got - mean).abs() / (mean * (1.0 - mass)).sqrt();
            worst = worst.max(z);
            check(z <= 3.0, format!("l={l} alpha_t={alpha_t} b={b}: count {got} vs expected {mean:.1} ({z:.2} sigma)"))?;
        }
    }

    // Searched sample complexity of the identity-report arm against the
    // Hellinger bounds on the TV grid.
    let cfg = tv_config();
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.arms.retain(|a| a.name == "non_private");
    let rows = run_tv_sweep(&sweep_cfg).map_err(|e| e.to_string())?;
    let arm = &sweep_cfg.arms[0];
    let params = arm.behavior().map_err(|e| e.to_string())?;
    let ads = active_ads(&ab_campaigns(cfg.ell, cfg.b_test).map_err(|e| e.to_string())?);
    let base = cfg.base_spec().map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for row in &rows {
        let d0 = base.materialize().map_err(|e| e.to_string())?;
        let d1 = base.derive_alternate(cfg.b_test, row.param_value).and_then(|s| s.materialize()).map_err(|e| e.to_string())?;
        let r0 = engagement_output_distribution(&d0, &ads, &params).map_err(|e| e.to_string())?;
        let r1 = engagement_output_distribution(&d1, &ads, &params).map_err(|e| e.to_string())?;
        let bounds = sc_bounds(&r0, &r1, DEFAULT_BETA, None).map_err(|e| e.to_string())?;
        let n = row.minimal_n.ok_or("identity arm hit the ceiling")? as f64;
        check(
            n >= 0.1 * bounds.sc_lower && n <= 10.0 * bounds.sc_upper,
            format!("minimal_n {n} outside [{:.0}, {:.0}]", 0.1 * bounds.sc_lower, 10.0 * bounds.sc_upper),
        )?;
        ratios.push(n / bounds.sc_upper);
    }
    within(Duration::from_secs(10 * 60), start)?;
    Ok(format!(
        "R_b counts within {worst:.2} sigma; minimal_n / sc_upper in [{:.2}, {:.2}]",
        ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        ratios.iter().cloned().fold(0.0, f64::max)
    ))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (n, p0, level, trials) = (500u64, 0.3, 0.05, 20_000u64);
    let params = TulapParams::from_epsilon(0.5).map_err(|e| e.to_string())?;
    let table = BinomialTable::new(n, p0).map_err(|e| e.to_string())?;
    let mut r = seeded(SEED);
    let (mut exact_rej, mut ump_rej) = (0u64, 0u64);
    for _ in 0..trials {
        let k = table.sample(&mut r);
        if binomial_test_exact(k, n, p0, Side::Upper, level).map_err(|e| e.to_string())?.reject {
            exact_rej += 1;
        }
        let noisy = k as f64 + tulap_sample(&params, &mut r);
        if ump_dp_binomial_test(noisy, n, p0, &params, Side::Upper, level).map_err(|e| e.to_string())?.reject {
            ump_rej += 1;
        }
    }
    let (e1, u1) = (exact_rej as f64 / trials as f64, ump_rej as f64 / trials as f64);
    check(e1 <= 0.055 && u1 <= 0.055, format!("type I error exact {e1}, UMP {u1}"))?;

    let draws = 1_000_000;
    let mut xs: Vec<f64> = (0..draws).map(|_| tulap_sample(&params, &mut r)).collect();
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = tulap_cdf(&params, x);
            (f - i as f64 / draws as f64).abs().max((f - (i + 1) as f64 / draws as f64).abs())
        })
        .fold(0.0, f64::max);
    check(ks <= 0.005, format!("Kolmogorov distance {ks}"))?;

    let eps = 0.5f64;
    let mut worst: f64 = 0.0;
    for w in -50i64..=50 {
        for c in -1i64..=1 {
            // Neighbouring counts c and c + 1.
            let ratio = geometric_noise_pmf(w - c, eps) / geometric_noise_pmf(w - c - 1, eps);
            worst = worst.max(ratio.max(1.0 / ratio));
        }
    }
    check(worst <= eps.exp() * (1.0 + 1e-12), format!("geometric ratio {worst} exceeds e^eps"))?;
    within(Duration::from_secs(5 * 60), start)?;
    Ok(format!("type I exact {e1:.4}, UMP {u1:.4}; KS {ks:.5}; max ratio {worst:.6} <= e^0.5"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::new(ExperimentKind::Audit, SEED);
    let out = run_audit(&cfg).map_err(|e| e.to_string())?;
    for arm in &out.arms {
        check(arm.verdict.is_violation(), format!("{} at n = {}: {:?}", arm.arm, arm.n, arm.verdict))?;
    }
    let mini = &out.miniature;
    let w = match &mini.identity {
        Verdict::Violated(w) => w,
        Verdict::Satisfied => return Err("identity miniature satisfied at epsilon 1".into()),
    };
    let recheck = mini.identity_recheck_ratio.ok_or("no recheck")?;
    check(
        (recheck - w.ratio).abs() <= 1e-12 * w.ratio.abs() && (recheck > 1f64.exp() || recheck < (-1f64).exp()),
        format!("witness ratio {} rechecked as {recheck}", w.ratio),
    )?;
    check(mini.constant.iter().all(|(_, v)| v.is_satisfied()), "constant mechanism violated")?;
    within(Duration::from_secs(10 * 60), start)?;
    let adv: Vec<String> = out
        .arms
        .iter()
        .map(|a| match &a.verdict {
            adleak_core::attribute_privacy::WitnessVerdict::ViolationEvidence(e) => {
                format!("{} n={} adv {:.3}±{:.3}", a.arm, a.n, e.advantage, e.half_width_3sigma)
            }
            _ => unreachable!(),
        })
        .collect();
    Ok(format!("{}; miniature witness ratio {:.4}", adv.join(", "), w.ratio))
}

fn criterion_7() -> Outcome {
    let cfg = tv_config();
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| run_tv_sweep(&cfg).and_then(|rows| csv_string(&rows))).map_err(|e| e.to_string())
    };
    let a = run(1)?;
    let b = run(4)?;
    let c = run(4)?;
    check(a == b && b == c, "CSV differs between runs")?;
    Ok(format!("{} bytes identical across 1 and 4 threads", a.len()))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 7] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {id}: PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id}: FAIL  {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
