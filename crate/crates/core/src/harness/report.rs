//! Statistics over finished runs and comparison with reference values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::reference::{RefKind, ReferenceEntry, ReferenceTable};
use super::{read_outcomes, Condition, HarnessError, Manifest, Outcome, OutcomeRecord, OUTCOMES};
use crate::agent::graph::ArchitectureName;
use crate::pgg::{PggCondition, PggOutcome};
use crate::stats::{self, Direction, StatKind, StatResult, StatsError, TrendClass, TrendResult};
use crate::tpp::{TppCondition, TppOutcome};
use crate::transcript::SCHEMA_VERSION;
use crate::Study;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub reference: ReferenceTable,
    /// Fail with `MissingAnalysis` instead of listing what could not be computed.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub backend_id: String,
    pub model_id: String,
    pub succeeded: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub population: String,
    pub citation: String,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance_match: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification_match: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub analysis: String,
    /// Which computation: "ols", "student", "welch", "between", "paired"
    /// (F = t² of the seat-matched contrast), "paired_t", "pearson", "oneway".
    pub variant: String,
    pub result: StatResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
    /// Same direction as the human reference and p < 0.05.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates_human: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub analysis: String,
    pub n: usize,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub analysis: String,
    pub round_means: Vec<f64>,
    pub trend: TrendResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Missing {
    pub analysis: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub study: Study,
    pub architecture: ArchitectureName,
    pub runs: Vec<RunRow>,
    /// Successful replicas per condition.
    pub replicas: BTreeMap<String, usize>,
    pub compared: bool,
    pub tests: Vec<TestRow>,
    pub descriptives: Vec<DescriptiveRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trends: Vec<TrendRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<Missing>,
}

impl Report {
    pub fn test(&self, analysis: &str, variant: &str) -> Option<&TestRow> {
        self.tests.iter().find(|r| r.analysis == analysis && r.variant == variant)
    }

    pub fn descriptive(&self, analysis: &str) -> Option<&DescriptiveRow> {
        self.descriptives.iter().find(|r| r.analysis == analysis)
    }

    pub fn trend(&self, analysis: &str) -> Option<&TrendRow> {
        self.trends.iter().find(|r| r.analysis == analysis)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = dir.join("report.json");
        let md = dir.join("report.md");
        std::fs::write(&json, self.to_json()).map_err(|e| HarnessError::io(&json, e))?;
        std::fs::write(&md, self.to_markdown()).map_err(|e| HarnessError::io(&md, e))?;
        Ok((json, md))
    }
}

/// Loaded outcomes of one or more runs of the same study and architecture.
pub struct RunSet {
    pub study: Study,
    pub architecture: ArchitectureName,
    pub runs: Vec<RunRow>,
    /// (run index, record)
    pub records: Vec<(usize, OutcomeRecord)>,
}

impl RunSet {
    pub fn load(run_dirs: &[PathBuf]) -> Result<Self, HarnessError> {
        let mut runs = Vec::new();
        let mut records = Vec::new();
        let mut kind: Option<(Study, ArchitectureName)> = None;
        for (i, dir) in run_dirs.iter().enumerate() {
            let m = Manifest::load(dir)?;
            if !m.complete {
                return Err(HarnessError::Config(format!("run {} is incomplete; rerun it first", m.run_id)));
            }
            let this = (m.config.study, m.config.architecture);
            match kind {
                None => kind = Some(this),
                Some(k) if k != this => {
                    return Err(HarnessError::Config(format!(
                        "run {} is {} / {}, earlier runs are {} / {}",
                        m.run_id, this.0, this.1, k.0, k.1
                    )))
                }
                _ => {}
            }
            runs.push(RunRow {
                run_id: m.run_id.clone(),
                backend_id: m.backend_id.clone(),
                model_id: m.model_id.clone(),
                succeeded: m.succeeded,
                failed: m.failures.len() as u64,
            });
            records.extend(read_outcomes(&dir.join(OUTCOMES))?.into_iter().map(|r| (i, r)));
        }
        let (study, architecture) = kind.ok_or_else(|| HarnessError::Config("no runs given".into()))?;
        Ok(RunSet { study, architecture, runs, records })
    }
}

pub fn report(runs: &RunSet, opts: &ReportOptions) -> Result<Report, HarnessError> {
    let mut b = Builder {
        reference: &opts.reference,
        populations: vec!["human", runs.architecture.as_str()],
        strict: opts.strict,
        tests: Vec::new(),
        descriptives: Vec::new(),
        trends: Vec::new(),
        missing: Vec::new(),
    };
    let mut replicas = BTreeMap::new();
    for (_, r) in &runs.records {
        *replicas.entry(r.condition.to_string()).or_insert(0) += 1;
    }
    match runs.study {
        Study::Tpp => tpp_analyses(runs, &mut b)?,
        Study::Pgg => pgg_analyses(runs, &mut b)?,
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        study: runs.study,
        architecture: runs.architecture,
        runs: runs.runs.clone(),
        replicas,
        compared: !opts.reference.is_empty(),
        tests: b.tests,
        descriptives: b.descriptives,
        trends: b.trends,
        missing: b.missing,
    })
}

struct Builder<'a> {
    reference: &'a ReferenceTable,
    populations: Vec<&'a str>,
    strict: bool,
    tests: Vec<TestRow>,
    descriptives: Vec<DescriptiveRow>,
    trends: Vec<TrendRow>,
    missing: Vec<Missing>,
}

impl Builder<'_> {
    fn refs(&self, analysis: &str, kinds: &[RefKind]) -> Vec<&ReferenceEntry> {
        let mut v = self.reference.matching(analysis, &self.populations);
        v.retain(|e| kinds.contains(&e.kind));
        v
    }

    fn miss(&mut self, analysis: &str, reason: impl Into<String>) -> Result<(), HarnessError> {
        let reason = reason.into();
        if self.strict {
            return Err(HarnessError::MissingAnalysis { analysis: analysis.into(), reason });
        }
        self.missing.push(Missing { analysis: analysis.into(), reason });
        Ok(())
    }

    fn test(&mut self, analysis: &str, variant: &str, result: Result<StatResult, StatsError>) -> Result<(), HarnessError> {
        let result = match result {
            Ok(r) => r,
            Err(e) => return self.miss(analysis, format!("{variant}: {e}")),
        };
        let kinds: &[RefKind] = match variant {
            "ols" => &[RefKind::Slope],
            "student" | "welch" | "paired_t" => &[RefKind::T],
            "pearson" => &[RefKind::Chi2],
            _ => &[RefKind::F],
        };
        let refs = self.refs(analysis, kinds);
        let comparisons: Vec<Comparison> = refs.iter().map(|e| compare(e, &result, None)).collect();
        let replicates_human = refs
            .iter()
            .find(|e| e.population == "human")
            .and_then(|e| e.direction)
            .map(|d| d == result.direction && result.significant(ALPHA));
        self.tests.push(TestRow { analysis: analysis.into(), variant: variant.into(), result, comparisons, replicates_human });
        Ok(())
    }

    fn descriptive(&mut self, analysis: &str, xs: &[f64], with_sd: bool) -> Result<(), HarnessError> {
        if xs.is_empty() {
            return self.miss(analysis, "no observations");
        }
        let comparisons = self
            .refs(analysis, &[RefKind::Mean, RefKind::Rate])
            .into_iter()
            .map(|e| Comparison {
                reference: e.id.clone(),
                population: e.population.clone(),
                citation: e.citation.clone(),
                statistic: e.statistic,
                sd: e.sd,
                direction_match: None,
                significance_match: None,
                classification_match: None,
            })
            .collect();
        self.descriptives.push(DescriptiveRow {
            analysis: analysis.into(),
            n: xs.len(),
            mean: stats::mean(xs),
            sd: (with_sd && xs.len() > 1).then(|| stats::std_dev(xs)),
            comparisons,
        });
        Ok(())
    }

    fn trend(&mut self, analysis: &str, round_means: Vec<f64>) -> Result<(), HarnessError> {
        let trend = match stats::linear_trend(&round_means, round_means.len()) {
            Ok(t) => t,
            Err(e) => return self.miss(analysis, e.to_string()),
        };
        let comparisons =
            self.refs(analysis, &[RefKind::F, RefKind::Slope])
            .into_iter()
            .map(|e| compare(e, &trend.f, Some(trend.classification))).collect();
        self.trends.push(TrendRow { analysis: analysis.into(), round_means, trend, comparisons });
        Ok(())
    }
}

fn compare(e: &ReferenceEntry, ours: &StatResult, class: Option<TrendClass>) -> Comparison {
    Comparison {
        reference: e.id.clone(),
        population: e.population.clone(),
        citation: e.citation.clone(),
        statistic: e.statistic,
        sd: e.sd,
        direction_match: e.direction.map(|d| d == ours.direction),
        significance_match: e.significant.map(|s| s == ours.significant(ALPHA)),
        classification_match: e.classification.zip(class).map(|(a, b)| a == b),
    }
}

fn tpp_analyses(runs: &RunSet, b: &mut Builder) -> Result<(), HarnessError> {
    let games = |c: TppCondition| -> Vec<&TppOutcome> {
        runs.records
            .iter()
            .filter_map(|(_, r)| match &r.outcome {
                Outcome::Tpp(o) if o.condition == c => Some(o),
                _ => None,
            })
            .collect()
    };
    let public = games(TppCondition::Public);
    let private = games(TppCondition::Private);

    // Trust analyses use the condition in which the Chooser saw the Stage-1 decision.
    let trust_ids = [
        "tpp.sent.coefficient",
        "tpp.sent.t_test",
        "tpp.sent.punishers",
        "tpp.sent.non_punishers",
        "tpp.returned.coefficient",
        "tpp.returned.t_test",
        "tpp.returned.punishers",
        "tpp.returned.non_punishers",
    ];
    if public.is_empty() {
        for id in trust_ids {
            b.miss(id, "no public-condition games")?;
        }
    } else {
        let sent: Vec<(bool, f64)> = public.iter().map(|o| (o.stage1.punished, o.stage2.sent_pct)).collect();
        // Nothing was returned when nothing was sent.
        let returned: Vec<(bool, f64)> = public
            .iter()
            .filter(|o| o.stage2.sent > 0)
            .map(|o| (o.stage1.punished, o.stage2.returned_pct))
            .collect();
        for (name, data) in [("sent", &sent), ("returned", &returned)] {
            let y: Vec<f64> = data.iter().map(|d| d.1).collect();
            let x: Vec<f64> = data.iter().map(|d| if d.0 { 1.0 } else { 0.0 }).collect();
            let yes: Vec<f64> = data.iter().filter(|d| d.0).map(|d| d.1).collect();
            let no: Vec<f64> = data.iter().filter(|d| !d.0).map(|d| d.1).collect();
            b.test(&format!("tpp.{name}.coefficient"), "ols", stats::ols_simple(&y, &x))?;
            b.test(&format!("tpp.{name}.t_test"), "student", stats::t_test_ind(&yes, &no, true))?;
            b.test(&format!("tpp.{name}.t_test"), "welch", stats::t_test_ind(&yes, &no, false))?;
            b.descriptive(&format!("tpp.{name}.punishers"), &yes, true)?;
            b.descriptive(&format!("tpp.{name}.non_punishers"), &no, true)?;
        }
    }

    let rate = |g: &[&TppOutcome]| -> Vec<f64> {
        g.iter().map(|o| if o.stage1.punished { 100.0 } else { 0.0 }).collect()
    };
    b.descriptive("tpp.punish_rate.public", &rate(&public), false)?;
    b.descriptive("tpp.punish_rate.private", &rate(&private), false)?;
    if public.is_empty() || private.is_empty() {
        b.miss("tpp.punish_rate.chi2", "needs both public and private games")?;
    } else {
        let count = |g: &[&TppOutcome]| {
            let k = g.iter().filter(|o| o.stage1.punished).count() as u64;
            [k, g.len() as u64 - k]
        };
        b.test("tpp.punish_rate.chi2", "pearson", stats::chi_square_2x2([count(&public), count(&private)]))?;
    }
    Ok(())
}

const PAIRS: [(&str, PggCondition, PggCondition); 3] = [
    ("pgg.pairwise.gossip_vs_basic", PggCondition::Gossip, PggCondition::Basic),
    ("pgg.pairwise.ostracism_vs_basic", PggCondition::GossipOstracism, PggCondition::Basic),
    ("pgg.pairwise.ostracism_vs_gossip", PggCondition::GossipOstracism, PggCondition::Gossip),
];

const TABLED: [PggCondition; 3] = [PggCondition::Basic, PggCondition::Gossip, PggCondition::GossipOstracism];

fn pgg_analyses(runs: &RunSet, b: &mut Builder) -> Result<(), HarnessError> {
    // Per-agent six-round sums keyed by (run, replica, agent name), so the
    // same persona can be matched across conditions.
    let mut sums: BTreeMap<PggCondition, BTreeMap<(usize, u64, String), f64>> = BTreeMap::new();
    let mut sessions: BTreeMap<PggCondition, Vec<&PggOutcome>> = BTreeMap::new();
    for (run, r) in &runs.records {
        if let (Outcome::Pgg(o), Condition::Pgg(c)) = (&r.outcome, r.condition) {
            let m = sums.entry(c).or_default();
            for a in &o.agents {
                m.insert((*run, r.replica, a.name.clone()), f64::from(a.contribution_sum));
            }
            sessions.entry(c).or_default().push(o);
        }
    }
    let values = |c: PggCondition| -> Vec<f64> { sums.get(&c).map(|m| m.values().copied().collect()).unwrap_or_default() };

    let present: Vec<PggCondition> = PggCondition::ALL.into_iter().filter(|c| sums.contains_key(c)).collect();
    if TABLED.iter().any(|c| !sums.contains_key(c)) {
        b.miss("pgg.overall.anova", "needs basic, gossip and gossip_ostracism sessions")?;
    } else {
        let groups: Vec<Vec<f64>> = present.iter().map(|c| values(*c)).collect();
        b.test("pgg.overall.anova", "oneway", stats::anova_oneway(&groups))?;
    }

    for (id, hi, lo) in PAIRS {
        let (Some(a), Some(z)) = (sums.get(&hi), sums.get(&lo)) else {
            b.miss(id, format!("needs {} and {} sessions", hi.as_str(), lo.as_str()))?;
            continue;
        };
        let av: Vec<f64> = a.values().copied().collect();
        let zv: Vec<f64> = z.values().copied().collect();
        b.test(id, "between", stats::t_test_ind(&av, &zv, true).map(t_to_f))?;
        let (pa, pz): (Vec<f64>, Vec<f64>) =
            a.iter().filter_map(|(k, v)| z.get(k).map(|w| (*v, *w))).unzip();
        b.test(id, "paired", stats::paired_t(&pa, &pz).map(t_to_f))?;
        b.test(id, "paired_t", stats::paired_t(&pa, &pz))?;
    }

    for c in present.iter().copied() {
        b.descriptive(&format!("pgg.mean.{}", c.as_str()), &values(c), true)?;
    }
    for c in TABLED {
        if !sums.contains_key(&c) {
            b.miss(&format!("pgg.mean.{}", c.as_str()), "no sessions")?;
        }
    }

    for c in TABLED.into_iter().chain(present.iter().copied().filter(|c| !TABLED.contains(c))) {
        let id = format!("pgg.trend.{}", c.as_str());
        let Some(list) = sessions.get(&c) else {
            b.miss(&id, "no sessions")?;
            continue;
        };
        b.trend(&id, pooled_round_means(list))?;
    }
    Ok(())
}

/// Per-round mean contribution over every contributing agent in every session.
pub fn pooled_round_means(sessions: &[&PggOutcome]) -> Vec<f64> {
    let rounds = sessions.iter().map(|s| s.rounds.len()).max().unwrap_or(0);
    (0..rounds)
        .map(|r| {
            let xs: Vec<f64> = sessions
                .iter()
                .filter_map(|s| s.rounds.get(r))
                .flat_map(|rec| rec.contributions.values().map(|c| f64::from(*c)))
                .collect();
            stats::mean(&xs)
        })
        .collect()
}

/// A two-group t contrast as F(1, df) = t² with η² = t² / (t² + df).
pub fn t_to_f(t: StatResult) -> StatResult {
    let f = t.statistic * t.statistic;
    let df = t.df.0;
    StatResult {
        kind: StatKind::F,
        statistic: f,
        df: (1.0, Some(df)),
        p_value: t.p_value,
        effect_size: Some(if f.is_finite() { f / (f + df) } else { 1.0 }),
        std_error: None,
        direction: t.direction,
        perfect_fit: t.perfect_fit,
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        format!("{x}")
    }
}

fn flag(x: Option<bool>) -> &'static str {
    match x {
        Some(true) => "yes",
        Some(false) => "no",
        None => "",
    }
}

fn dir(d: Direction) -> &'static str {
    match d {
        Direction::Positive => "+",
        Direction::Negative => "-",
        Direction::Zero => "0",
    }
}

fn df_text(df: (f64, Option<f64>)) -> String {
    let f = |d: f64| if d.fract() == 0.0 { format!("{d}") } else { format!("{d:.2}") };
    match df.1 {
        Some(d2) => format!("({}, {})", f(df.0), f(d2)),
        None => format!("({})", f(df.0)),
    }
}

fn refs_text(c: &[Comparison]) -> String {
    c.iter()
        .map(|c| match c.sd {
            Some(sd) => format!("{} {} ({})", c.population, num(c.statistic), num(sd)),
            None => format!("{} {}", c.population, num(c.statistic)),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn match_text(c: &[Comparison]) -> String {
    c.iter()
        .map(|c| {
            let mut parts = Vec::new();
            if c.direction_match.is_some() {
                parts.push(format!("dir {}", flag(c.direction_match)));
            }
            if c.significance_match.is_some() {
                parts.push(format!("sig {}", flag(c.significance_match)));
            }
            if c.classification_match.is_some() {
                parts.push(format!("class {}", flag(c.classification_match)));
            }
            format!("{}: {}", c.population, parts.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} report: {} architecture\n", self.study.as_str().to_uppercase(), self.architecture);
        for r in &self.runs {
            let _ = writeln!(
                s,
                "- run `{}` ({} / {}): {} succeeded, {} failed",
                r.run_id, r.backend_id, r.model_id, r.succeeded, r.failed
            );
        }
        for (c, n) in &self.replicas {
            let _ = writeln!(s, "- {c}: {n} replicas");
        }
        let _ = writeln!(s, "\n## Tests\n");
        if self.compared {
            let _ = writeln!(s, "| analysis | variant | statistic | df | p | effect | dir | reference | matches | replicates human |");
            let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|");
        } else {
            let _ = writeln!(s, "| analysis | variant | statistic | df | p | effect | dir |");
            let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        }
        for r in &self.tests {
            let res = &r.result;
            let _ = write!(
                s,
                "| {} | {} | {} | {} | {:.4} | {} | {} |",
                r.analysis,
                r.variant,
                num(res.statistic),
                df_text(res.df),
                res.p_value,
                res.effect_size.map(num).unwrap_or_default(),
                dir(res.direction)
            );
            if self.compared {
                let _ = write!(s, " {} | {} | {} |", refs_text(&r.comparisons), match_text(&r.comparisons), flag(r.replicates_human));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "\n## Means\n");
        if self.compared {
            let _ = writeln!(s, "| analysis | n | mean | sd | reference mean (sd) |\n|---|---|---|---|---|");
        } else {
            let _ = writeln!(s, "| analysis | n | mean | sd |\n|---|---|---|---|");
        }
        for d in &self.descriptives {
            let _ = write!(s, "| {} | {} | {} | {} |", d.analysis, d.n, num(d.mean), d.sd.map(num).unwrap_or_default());
            if self.compared {
                let _ = write!(s, " {} |", refs_text(&d.comparisons));
            }
            s.push('\n');
        }
        if !self.trends.is_empty() {
            let _ = writeln!(s, "\n## Trends over rounds\n");
            if self.compared {
                let _ = writeln!(s, "| analysis | round means | slope | F | df | p | class | reference | matches |");
                let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
            } else {
                let _ = writeln!(s, "| analysis | round means | slope | F | df | p | class |");
                let _ = writeln!(s, "|---|---|---|---|---|---|---|");
            }
            for t in &self.trends {
                let means = t.round_means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(", ");
                let class = serde_json::to_value(t.trend.classification).expect("serializes");
                let _ = write!(
                    s,
                    "| {} | {} | {} | {} | {} | {:.4} | {} |",
                    t.analysis,
                    means,
                    num(t.trend.slope),
                    num(t.trend.f.statistic),
                    df_text(t.trend.f.df),
                    t.trend.f.p_value,
                    class.as_str().unwrap_or_default()
                );
                if self.compared {
                    let _ = write!(s, " {} | {} |", refs_text(&t.comparisons), match_text(&t.comparisons));
                }
                s.push('\n');
            }
        }
        if !self.missing.is_empty() {
            let _ = writeln!(s, "\n## Not computed\n");
            for m in &self.missing {
                let _ = writeln!(s, "- {}: {}", m.analysis, m.reason);
            }
        }
        s
    }
}
