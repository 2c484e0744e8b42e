//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Statistics are checked against brute-force formulas and p-values against
//! numerical integration of the reference densities, both written here
//! without touching the library's special functions.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gabm_core::harness::reference::ReferenceTable;
use gabm_core::harness::replay::replay;
use gabm_core::harness::report::{report, ReportOptions, RunSet};
use gabm_core::harness::{run, scan_run, ExperimentConfig, OUTCOMES};
use gabm_core::pgg::compute_payoffs;
use gabm_core::stats::{self, StatResult};
use gabm_core::tpp::{Stage2Record, TppCondition, TppParams};
use gabm_core::Study;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let runs = Runs::new(dir.path());
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("payoff arithmetic, exhaustive", Duration::from_secs(1), Box::new(payoff_arithmetic)),
        ("trust stage conservation", Duration::from_secs(1), Box::new(tpp_conservation)),
        ("statistics match oracles", Duration::from_secs(10), Box::new(stats_oracles)),
        ("known-value fixtures", Duration::from_secs(1), Box::new(known_fixtures)),
        ("determinism and replay", Duration::from_secs(60), Box::new(|| runs.determinism())),
        ("end-to-end directional pipeline", Duration::from_secs(300), Box::new(|| runs.directional())),
        ("condition isolation scans", Duration::from_secs(60), Box::new(|| runs.isolation())),
        ("degrees-of-freedom structure", Duration::from_secs(1), Box::new(df_structure)),
        ("reference comparison path", Duration::from_secs(60), Box::new(reference_path)),
    ];
    let mut failed = 0;
    for (name, budget, check) in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > *budget => Err(format!("{detail}; took {took:.2?}, budget {budget:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn payoff_arithmetic() -> Outcome {
    let allotment = 10u32;
    let mut checked = 0u64;
    for size in [3usize, 4] {
        for m in [1.5, 2.0] {
            let total = 11usize.pow(size as u32);
            for code in 0..total {
                let mut c = vec![0u32; size];
                let mut k = code;
                for slot in c.iter_mut() {
                    *slot = (k % 11) as u32;
                    k /= 11;
                }
                let got = compute_payoffs(&c, m, allotment).map_err(|e| e.to_string())?;
                let sum: u32 = c.iter().sum();
                for (i, ci) in c.iter().enumerate() {
                    let want = f64::from(allotment - ci) + m * f64::from(sum) / size as f64;
                    ensure!(got[i] == want, "{c:?} m={m}: player {i} got {} want {want}", got[i]);
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} contribution vectors, exact"))
}

fn tpp_conservation() -> Outcome {
    let params = TppParams::new(TppCondition::Public);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let sent = rng.random_range(0..=params.chooser_endowment_s2);
        let returned = rng.random_range(0..=3 * sent);
        let r = Stage2Record::settle(&params, sent, returned, true);
        ensure!(
            r.chooser_payoff + r.signaller_payoff == params.chooser_endowment_s2 + 2 * sent,
            "sent {sent} returned {returned}: {} + {}",
            r.chooser_payoff,
            r.signaller_payoff
        );
    }
    Ok("1000 random pairs, exact".into())
}

// ---- oracles ----

fn ln_gamma_oracle(x: f64) -> f64 {
    // Lanczos, g = 7, nine terms.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma_oracle(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            simpson(f, lo, hi, flo, fmid, fhi, whole, 1e-14, 40)
        })
        .sum()
}

/// Two-sided p of Student t by integrating the density over [0, |t|].
fn p_t_oracle(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let ln_c = ln_gamma_oracle((df + 1.0) / 2.0) - ln_gamma_oracle(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    (1.0 - 2.0 * integrate(&dens, 0.0, t.abs())).max(0.0)
}

/// Upper-tail p of F(d1, d2); substitutes x = u² to remove the pole at 0.
fn p_f_oracle(f: f64, d1: f64, d2: f64) -> f64 {
    if !f.is_finite() {
        return 0.0;
    }
    let ln_c = ln_gamma_oracle((d1 + d2) / 2.0) - ln_gamma_oracle(d1 / 2.0) - ln_gamma_oracle(d2 / 2.0)
        + d1 / 2.0 * (d1 / d2).ln();
    let dens = |u: f64| {
        if u == 0.0 {
            return if d1 == 1.0 { 2.0 * ln_c.exp() } else { 0.0 };
        }
        let x = u * u;
        2.0 * u * (ln_c + (d1 / 2.0 - 1.0) * x.ln() - (d1 + d2) / 2.0 * (1.0 + d1 * x / d2).ln()).exp()
    };
    (1.0 - integrate(&dens, 0.0, f.sqrt())).max(0.0)
}

/// Upper-tail p of chi-square(1), same substitution.
fn p_chi1_oracle(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let dens = |u: f64| c * (-u * u / 2.0).exp();
    (1.0 - integrate(&dens, 0.0, x.sqrt())).max(0.0)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ss(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn rel_close(got: f64, want: f64, what: &str) -> Result<(), String> {
    let err = (got - want).abs() / want.abs().max(1e-300);
    ensure!(err <= 1e-9 || (got - want).abs() <= 1e-12, "{what}: got {got} want {want} (rel {err:e})");
    Ok(())
}

fn p_close(res: &StatResult, want: f64, what: &str, worst: &mut f64) -> Result<(), String> {
    let err = (res.p_value - want).abs();
    *worst = worst.max(err);
    ensure!(err <= 1e-8, "{what} p: got {} want {want} (abs {err:e})", res.p_value);
    Ok(())
}

fn sample(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
    (0..n).map(|_| shift + rng.random_range(-5.0..5.0) + rng.random_range(-5.0..5.0)).collect()
}

fn stats_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_p = 0.0f64;
    for i in 0..200 {
        let na = rng.random_range(3..40);
        let nb = rng.random_range(3..40);
        let shift = rng.random_range(-2.0..2.0);
        let a = sample(&mut rng, na, shift);
        let b = sample(&mut rng, nb, 0.0);
        let tag = |s: &str| format!("instance {i} {s}");

        // Student t.
        let (fa, fb) = (na as f64, nb as f64);
        let sp2 = (ss(&a) + ss(&b)) / (fa + fb - 2.0);
        let t_want = (mean(&a) - mean(&b)) / (sp2 * (1.0 / fa + 1.0 / fb)).sqrt();
        let t = stats::t_test_ind(&a, &b, true).map_err(|e| e.to_string())?;
        rel_close(t.statistic, t_want, &tag("pooled t"))?;
        p_close(&t, p_t_oracle(t.statistic, t.df.0), &tag("pooled t"), &mut worst_p)?;

        // Welch t and its df.
        let (va, vb) = (ss(&a) / (fa - 1.0) / fa, ss(&b) / (fb - 1.0) / fb);
        let w = stats::t_test_ind(&a, &b, false).map_err(|e| e.to_string())?;
        rel_close(w.statistic, (mean(&a) - mean(&b)) / (va + vb).sqrt(), &tag("welch t"))?;
        rel_close(w.df.0, (va + vb).powi(2) / (va * va / (fa - 1.0) + vb * vb / (fb - 1.0)), &tag("welch df"))?;

        // OLS slope and standard error.
        let x: Vec<f64> = (0..na).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().zip(&a).map(|(xi, e)| 0.7 * xi + e).collect();
        let (mx, my) = (mean(&x), mean(&y));
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(u, v)| (u - mx) * (v - my)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        let sse: f64 = x.iter().zip(&y).map(|(u, v)| (v - icpt - slope * u).powi(2)).sum();
        let se = (sse / (na as f64 - 2.0) / sxx).sqrt();
        let o = stats::ols_simple(&y, &x).map_err(|e| e.to_string())?;
        rel_close(o.statistic, slope, &tag("ols slope"))?;
        rel_close(o.std_error.unwrap(), se, &tag("ols se"))?;
        p_close(&o, p_t_oracle(slope / se, na as f64 - 2.0), &tag("ols"), &mut worst_p)?;

        // One-way ANOVA with three groups.
        let nc = rng.random_range(3..30);
        let c = sample(&mut rng, nc, 1.0);
        let groups = vec![a.clone(), b.clone(), c.clone()];
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let grand = mean(&all);
        let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
        let ssw: f64 = groups.iter().map(|g| ss(g)).sum();
        let (d1, d2) = (2.0, all.len() as f64 - 3.0);
        let f = stats::anova_oneway(&groups).map_err(|e| e.to_string())?;
        rel_close(f.statistic, (ssb / d1) / (ssw / d2), &tag("anova F"))?;
        rel_close(f.effect_size.unwrap(), ssb / (ssb + ssw), &tag("eta squared"))?;
        p_close(&f, p_f_oracle(f.statistic, d1, d2), &tag("anova"), &mut worst_p)?;

        // Chi-square on a 2x2 table.
        let table = [[rng.random_range(1..80u64), rng.random_range(1..80u64)], [rng.random_range(1..80u64), rng.random_range(1..80u64)]];
        let total = (table[0][0] + table[0][1] + table[1][0] + table[1][1]) as f64;
        let mut chi = 0.0;
        for r in 0..2 {
            for k in 0..2 {
                let e = (table[r][0] + table[r][1]) as f64 * (table[0][k] + table[1][k]) as f64 / total;
                chi += (table[r][k] as f64 - e).powi(2) / e;
            }
        }
        let ch = stats::chi_square_2x2(table).map_err(|e| e.to_string())?;
        rel_close(ch.statistic, chi, &tag("chi2"))?;
        p_close(&ch, p_chi1_oracle(ch.statistic), &tag("chi2"), &mut worst_p)?;

        // Linear trend over six round means.
        let means: Vec<f64> = (1..=6).map(|r| 5.0 + 0.3 * r as f64 + rng.random_range(-1.0..1.0)).collect();
        let rx: Vec<f64> = (1..=6).map(f64::from).collect();
        let (mrx, mry) = (3.5, mean(&means));
        let srr: f64 = rx.iter().map(|v| (v - mrx).powi(2)).sum();
        let srm: f64 = rx.iter().zip(&means).map(|(u, v)| (u - mrx) * (v - mry)).sum();
        let tslope = srm / srr;
        let ti = mry - tslope * mrx;
        let tsse: f64 = rx.iter().zip(&means).map(|(u, v)| (v - ti - tslope * u).powi(2)).sum();
        let tf = tslope * tslope * srr / (tsse / 4.0);
        let tr = stats::linear_trend(&means, 6).map_err(|e| e.to_string())?;
        rel_close(tr.slope, tslope, &tag("trend slope"))?;
        rel_close(tr.f.statistic, tf, &tag("trend F"))?;
        p_close(&tr.f, p_f_oracle(tr.f.statistic, 1.0, 4.0), &tag("trend"), &mut worst_p)?;
    }
    Ok(format!("200 instances; statistics within 1e-9 relative, worst p error {worst_p:.1e}"))
}

fn known_fixtures() -> Outcome {
    let t = stats::t_test_ind(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], true).map_err(|e| e.to_string())?;
    ensure!((t.statistic - -1.2247).abs() < 1e-3, "t = {}", t.statistic);
    let c = stats::chi_square_2x2([[30, 20], [10, 40]]).map_err(|e| e.to_string())?;
    ensure!((c.statistic - 16.667).abs() < 1e-3, "chi2 = {}", c.statistic);
    let f = stats::anova_oneway(&[vec![1.0, 2.0], vec![3.0, 4.0]]).map_err(|e| e.to_string())?;
    ensure!((f.statistic - 8.0).abs() < 1e-3, "F = {}", f.statistic);
    let eta = f.effect_size.unwrap();
    ensure!((eta - 0.8).abs() < 1e-3, "eta2 = {eta}");
    Ok(format!("t {:.4}, chi2 {:.3}, F {:.3}, eta2 {:.3}", t.statistic, c.statistic, f.statistic, eta))
}

fn df_structure() -> Outcome {
    let tr = stats::linear_trend(&[5.0, 5.5, 5.2, 6.1, 6.0, 6.4], 6).map_err(|e| e.to_string())?;
    ensure!(tr.f.df == (1.0, Some(4.0)), "trend df {:?}", tr.f.df);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let groups: Vec<Vec<f64>> = (0..3).map(|g| sample(&mut rng, 40, g as f64)).collect();
    let f = stats::anova_oneway(&groups).map_err(|e| e.to_string())?;
    ensure!(f.df == (2.0, Some(117.0)), "anova df {:?}", f.df);
    Ok("trend F(1, 4), 3x40 ANOVA F(2, 117)".into())
}

/// The runs shared by the determinism, directional and isolation criteria.
struct Runs {
    root: PathBuf,
    dirs: std::sync::OnceLock<Result<[PathBuf; 2], String>>,
}

impl Runs {
    fn new(root: &Path) -> Self {
        Runs { root: root.to_path_buf(), dirs: std::sync::OnceLock::new() }
    }

    fn config(&self, study: Study, copy: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(study, if study == Study::Tpp { 100 } else { 5 }, 42);
        cfg.output_dir = self.root.join(copy);
        cfg
    }

    /// Runs TPP n=100 and PGG 5 sessions per condition (first copy).
    fn primary(&self) -> Result<[PathBuf; 2], String> {
        self.dirs
            .get_or_init(|| {
                let t = run(&self.config(Study::Tpp, "a")).map_err(|e| e.to_string())?;
                let p = run(&self.config(Study::Pgg, "a")).map_err(|e| e.to_string())?;
                if t.failed + p.failed > 0 {
                    return Err(format!("{} replicas failed", t.failed + p.failed));
                }
                Ok([t.run_dir, p.run_dir])
            })
            .clone()
    }

    fn determinism(&self) -> Outcome {
        let first = self.primary()?;
        let mut lines = 0;
        for (study, dir) in [Study::Tpp, Study::Pgg].into_iter().zip(&first) {
            let again = run(&self.config(study, "b")).map_err(|e| e.to_string())?;
            let a = std::fs::read(dir.join(OUTCOMES)).map_err(|e| e.to_string())?;
            let b = std::fs::read(again.run_dir.join(OUTCOMES)).map_err(|e| e.to_string())?;
            ensure!(a == b, "{study}: outcome records differ between identical runs");
            lines += a.iter().filter(|c| **c == b'\n').count();
            let r = replay(dir, None).map_err(|e| e.to_string())?;
            ensure!(r.is_clean(), "{study}: replay produced {} diffs, first {:?}", r.diffs.len(), r.diffs.first());
        }
        Ok(format!("{lines} outcome records byte-identical across two runs; replay zero diffs"))
    }

    fn directional(&self) -> Outcome {
        let [tpp, pgg] = self.primary()?;
        let opts = ReportOptions { reference: ReferenceTable::builtin(), strict: true };
        let set = RunSet::load(&[tpp]).map_err(|e| e.to_string())?;
        let rep = report(&set, &opts).map_err(|e| e.to_string())?;
        let row = rep.test("tpp.sent.coefficient", "ols").ok_or("no sent coefficient row")?;
        // The row is in percent of the endowment; the policy adds 0.15 of a $10 endowment.
        let dollars = row.result.statistic * 10.0 / 100.0;
        ensure!(row.result.statistic > 0.0 && row.result.p_value < 0.05, "coefficient {:?}", row.result);
        ensure!((1.0..=2.0).contains(&dollars), "slope ${dollars:.3} outside [1, 2]");
        let human = row.comparisons.iter().find(|c| c.population == "human").ok_or("no human reference")?;
        ensure!(human.direction_match == Some(true), "direction flag {:?}", human.direction_match);

        let set = RunSet::load(&[pgg]).map_err(|e| e.to_string())?;
        let rep = report(&set, &opts).map_err(|e| e.to_string())?;
        let m = |c: &str| rep.descriptive(&format!("pgg.mean.{c}")).map(|d| d.mean).ok_or(format!("no mean for {c}"));
        let (basic, gossip, ostracism) = (m("basic")?, m("gossip")?, m("gossip_ostracism")?);
        ensure!(basic < gossip && gossip < ostracism, "means {basic} {gossip} {ostracism}");
        let anova = rep.test("pgg.overall.anova", "oneway").ok_or("no anova row")?;
        ensure!(anova.result.p_value < 0.05, "anova p {}", anova.result.p_value);
        Ok(format!(
            "sent slope ${dollars:.2} per punishment (p {:.1e}); sums {basic:.2} < {gossip:.2} < {ostracism:.2}, ANOVA p {:.1e}",
            row.result.p_value, anova.result.p_value
        ))
    }

    fn isolation(&self) -> Outcome {
        let dirs = self.primary()?;
        let mut violations = Vec::new();
        for d in &dirs {
            violations.extend(scan_run(d).map_err(|e| e.to_string())?);
        }
        ensure!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
        Ok("private choosers and gossip recipients: zero violations".into())
    }
}

fn sample_runs() -> Result<Vec<PathBuf>, String> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/samples");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| format!("{}: {e}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn reference_path() -> Outcome {
    let table = ReferenceTable::builtin();
    let dirs = sample_runs()?;
    ensure!(dirs.len() >= 2, "expected TPP and PGG samples, found {}", dirs.len());
    let mut flags = 0;
    let mut agree = 0;
    for d in dirs {
        let set = RunSet::load(std::slice::from_ref(&d)).map_err(|e| e.to_string())?;
        let rep = report(&set, &ReportOptions { reference: table.clone(), strict: false }).map_err(|e| e.to_string())?;
        ensure!(rep.compared, "{}: no comparison", d.display());
        let comps = rep
            .tests
            .iter()
            .flat_map(|t| &t.comparisons)
            .chain(rep.trends.iter().flat_map(|t| &t.comparisons));
        for c in comps {
            for f in [c.direction_match, c.significance_match].into_iter().flatten() {
                flags += 1;
                agree += usize::from(f);
            }
        }
    }
    ensure!(flags > 0, "no match flags were computed");
    Ok(format!("{flags} direction/significance flags computed ({agree} agree with the reference)"))
}
