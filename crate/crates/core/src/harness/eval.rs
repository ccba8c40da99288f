//! Held-out evaluation, plain-text score reports, and pairwise comparison.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{Allocator, AllocatorKind};
use crate::context::{sample_context, ScenarioSpec};
use crate::error::{Error, Result};
use crate::harness::stats::{significance_stars, welch_t_test, WelchResult};
use crate::rng::derive_seed;
use crate::sim::{MissionSimulator, ScoringMode};

/// Scenario `s` of an evaluation with seed `seed` samples its context from
/// this seed.
pub fn scenario_context_seed(seed: u64, s: u64) -> u64 {
    derive_seed(seed, &[s])
}

/// Seed handed to the allocator for scenario `s` (only the random baseline
/// uses it).
pub fn scenario_allocator_seed(seed: u64, s: u64) -> u64 {
    derive_seed(seed, &[s, 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: u64,
    pub total_score: f64,
    pub mean_poi_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    /// Total mission score.
    Total,
    /// Mean score per POI.
    Poi,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Metric::Total),
            "poi" => Ok(Metric::Poi),
            _ => Err(Error::Config(format!("unknown metric `{s}` (expected total or poi)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Total => "total",
            Metric::Poi => "poi",
        })
    }
}

fn mode_name(mode: ScoringMode) -> &'static str {
    match mode {
        ScoringMode::Stochastic => "stochastic",
        ScoringMode::Expected => "expected",
    }
}

fn parse_mode(s: &str) -> Result<ScoringMode> {
    match s {
        "stochastic" => Ok(ScoringMode::Stochastic),
        "expected" => Ok(ScoringMode::Expected),
        _ => Err(Error::Config(format!("unknown scoring mode `{s}`"))),
    }
}

pub fn parse_scoring_mode(s: &str) -> Result<ScoringMode> {
    parse_mode(s)
}

/// Per-scenario scores of one allocator on one team setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: AllocatorKind,
    pub setting: (usize, usize, usize),
    pub seed: u64,
    pub mode: ScoringMode,
    pub rows: Vec<ScenarioRow>,
}

/// Mean and sample standard deviation (zero for a single row).
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn n_scenarios(&self) -> usize {
        self.rows.len()
    }

    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match metric {
                Metric::Total => r.total_score,
                Metric::Poi => r.mean_poi_score,
            })
            .collect()
    }

    /// Average score (mean, sample std) over scenarios.
    pub fn aps(&self, metric: Metric) -> (f64, f64) {
        mean_std(self.values(metric).into_iter())
    }

    pub fn to_text(&self) -> String {
        let (k, i, j) = self.setting;
        let mut s = String::new();
        let _ = writeln!(s, "[report]");
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "setting={k},{i},{j}");
        let _ = writeln!(s, "n_scenarios={}", self.rows.len());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "mode={}", mode_name(self.mode));
        let _ = writeln!(s, "[rows]");
        let _ = writeln!(s, "scenario_id,total_score,mean_poi_score");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?}", r.scenario_id, r.total_score, r.mean_poi_score);
        }
        let (tm, ts) = self.aps(Metric::Total);
        let (pm, ps) = self.aps(Metric::Poi);
        let _ = writeln!(s, "[summary]");
        let _ = writeln!(s, "aps_total_mean={tm:?}");
        let _ = writeln!(s, "aps_total_std={ts:?}");
        let _ = writeln!(s, "aps_poi_mean={pm:?}");
        let _ = writeln!(s, "aps_poi_std={ps:?}");
        s
    }

    /// Parses `to_text` output. The summary must agree with the rows.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("report: {msg}"));
        let mut section = "";
        let mut header = std::collections::BTreeMap::new();
        let mut summary = std::collections::BTreeMap::new();
        let mut rows = Vec::new();
        let mut saw_columns = false;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[report]" | "[rows]" | "[summary]" => line,
                    _ => return Err(bad(format!("unknown section {line} on line {}", no + 1))),
                };
                continue;
            }
            match section {
                "[report]" | "[summary]" => {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| bad(format!("expected key=value on line {}", no + 1)))?;
                    let map = if section == "[report]" { &mut header } else { &mut summary };
                    if map.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
                        return Err(bad(format!("duplicate key {key}")));
                    }
                }
                "[rows]" => {
                    if !saw_columns {
                        if line != "scenario_id,total_score,mean_poi_score" {
                            return Err(bad(format!("unexpected row header `{line}`")));
                        }
                        saw_columns = true;
                        continue;
                    }
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != 3 {
                        return Err(bad(format!("row on line {} has {} fields", no + 1, fields.len())));
                    }
                    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", no + 1)));
                    rows.push(ScenarioRow {
                        scenario_id: fields[0].parse().map_err(|e| bad(format!("line {}: {e}", no + 1)))?,
                        total_score: num(fields[1])?,
                        mean_poi_score: num(fields[2])?,
                    });
                }
                _ => return Err(bad(format!("content before any section on line {}", no + 1))),
            }
        }
        let get = |key: &str| header.get(key).ok_or_else(|| bad(format!("missing {key}")));
        let kind: AllocatorKind = get("kind")?.parse()?;
        let setting = parse_setting(get("setting")?)?;
        let n: usize = get("n_scenarios")?.parse().map_err(|e| bad(format!("n_scenarios: {e}")))?;
        let seed: u64 = get("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?;
        let mode = parse_mode(get("mode")?)?;
        if n != rows.len() {
            return Err(bad(format!("n_scenarios={n} but {} rows", rows.len())));
        }
        let report = EvalReport {
            kind,
            setting,
            seed,
            mode,
            rows,
        };
        let (tm, ts) = report.aps(Metric::Total);
        let (pm, ps) = report.aps(Metric::Poi);
        for (key, want) in [
            ("aps_total_mean", tm),
            ("aps_total_std", ts),
            ("aps_poi_mean", pm),
            ("aps_poi_std", ps),
        ] {
            let got: f64 = summary
                .get(key)
                .ok_or_else(|| bad(format!("missing {key}")))?
                .parse()
                .map_err(|e| bad(format!("{key}: {e}")))?;
            if got.to_bits() != want.to_bits() && !(got.is_nan() && want.is_nan()) {
                return Err(bad(format!("{key}={got:?} disagrees with rows ({want:?})")));
            }
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Parses `k,i,j`.
pub fn parse_setting(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: std::result::Result<Vec<usize>, _> = parts.iter().map(|p| p.parse::<usize>()).collect();
    match nums.as_deref() {
        Ok([k, i, j]) => Ok((*k, *i, *j)),
        _ => Err(Error::Parse(format!("setting `{s}` is not k,i,j"))),
    }
}

/// Scores `allocator` on `n` held-out scenarios of team size `(k, i, j)`.
pub fn evaluate(
    allocator: &Allocator,
    setting: (usize, usize, usize),
    n: usize,
    seed: u64,
    mode: ScoringMode,
) -> Result<EvalReport> {
    evaluate_template(allocator, &ScenarioSpec::new(setting.0, setting.1, setting.2, seed), n, seed, mode)
}

/// Like [`evaluate`] with a custom scenario template; the template's seed is
/// replaced per scenario.
pub fn evaluate_template(
    allocator: &Allocator,
    template: &ScenarioSpec,
    n: usize,
    seed: u64,
    mode: ScoringMode,
) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    template.validate()?;
    let mut sim = MissionSimulator::new();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n as u64 {
        let ctx = sample_context(&template.with_seed(scenario_context_seed(seed, s)))?;
        let decision = allocator.allocate(&ctx, scenario_allocator_seed(seed, s))?;
        let out = sim.run(&ctx, &decision, seed, s, mode)?;
        rows.push(ScenarioRow {
            scenario_id: s,
            total_score: out.total_score,
            mean_poi_score: out.mean_poi_score,
        });
    }
    Ok(EvalReport {
        kind: allocator.kind(),
        setting: (template.k, template.i, template.j),
        seed,
        mode,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: AllocatorKind,
    pub b: AllocatorKind,
    pub metric: Metric,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: WelchResult,
    pub stars: String,
}

impl Comparison {
    pub fn to_line(&self) -> String {
        format!(
            "{} vs {} [{}]: mean {:.4} vs {:.4}, t={:.4}, df={:.2}, p={:.4e} {}",
            self.a, self.b, self.metric, self.mean_a, self.mean_b, self.test.t, self.test.df, self.test.p, self.stars
        )
        .trim_end()
        .to_string()
    }
}

/// Welch test of `a` against `b`. Reports must share the team setting.
pub fn compare(a: &EvalReport, b: &EvalReport, metric: Metric) -> Result<Comparison> {
    if a.setting != b.setting {
        return Err(Error::Contract(format!(
            "reports cover different settings {:?} and {:?}",
            a.setting, b.setting
        )));
    }
    let (va, vb) = (a.values(metric), b.values(metric));
    let test = welch_t_test(&va, &vb)?;
    Ok(Comparison {
        a: a.kind,
        b: b.kind,
        metric,
        mean_a: a.aps(metric).0,
        mean_b: b.aps(metric).0,
        stars: significance_stars(test.p).to_string(),
        test,
    })
}

/// All pairs `(i, j)` with `i < j`.
pub fn compare_all(reports: &[EvalReport], metric: Metric) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for x in 0..reports.len() {
        for y in x + 1..reports.len() {
            out.push(compare(&reports[x], &reports[y], metric)?);
        }
    }
    Ok(out)
}
