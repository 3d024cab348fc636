//! The evaluation report: per-condition rates, specialist normalization, permutation
//! tests, and text/SVG renderings. Same outcomes in, same bytes out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablation::{Condition, SuiteConfig};
use super::stats::{normalize_vs_specialist, permutation_test, success_rate, Normalized};
use crate::datapipe::xml_escape;
use crate::worldcore::{EpisodeStatus, SkillCategory, WorldId};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub world: WorldId,
    pub skill: SkillCategory,
    pub run_seed: u64,
    pub eval_seed: u64,
    pub status: EpisodeStatus,
    pub ticks_used: u32,
}

impl TaskOutcome {
    pub fn success(&self) -> bool {
        self.status == EpisodeStatus::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub n: usize,
    pub rate: f64,
    pub ci95: f64,
}

impl Rate {
    pub fn of<'a>(outcomes: impl IntoIterator<Item = &'a TaskOutcome>) -> Option<Rate> {
        let (mut successes, mut n) = (0, 0);
        for o in outcomes {
            n += 1;
            successes += usize::from(o.success());
        }
        let (rate, ci95) = success_rate(successes, n).ok()?;
        Some(Rate { successes, n, rate, ci95 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `<condition id>@<cfg scale>`.
    pub label: String,
    pub condition: Condition,
    pub cfg_scale: f64,
    pub overall: Rate,
    pub per_env: BTreeMap<String, Rate>,
    pub per_skill: BTreeMap<String, Rate>,
    /// Overall success rate of each training seed.
    pub per_seed: BTreeMap<u64, f64>,
    pub outcomes: Vec<TaskOutcome>,
}

impl ConditionReport {
    fn new(condition: Condition, cfg_scale: f64, outcomes: Vec<TaskOutcome>) -> Option<Self> {
        let overall = Rate::of(&outcomes)?;
        let mut per_env = BTreeMap::new();
        for w in WorldId::ALL {
            if let Some(r) = Rate::of(outcomes.iter().filter(|o| o.world == w)) {
                per_env.insert(w.as_str().to_string(), r);
            }
        }
        let mut per_skill = BTreeMap::new();
        for s in SkillCategory::ALL {
            if let Some(r) = Rate::of(outcomes.iter().filter(|o| o.skill == s)) {
                per_skill.insert(s.as_str().to_string(), r);
            }
        }
        let mut per_seed = BTreeMap::new();
        for seed in outcomes.iter().map(|o| o.run_seed).collect::<std::collections::BTreeSet<_>>() {
            let r = Rate::of(outcomes.iter().filter(|o| o.run_seed == seed)).expect("seed has outcomes");
            per_seed.insert(seed, r.rate);
        }
        Some(ConditionReport {
            label: label(&condition, cfg_scale),
            condition,
            cfg_scale,
            overall,
            per_env,
            per_skill,
            per_seed,
            outcomes,
        })
    }

    /// Mean success per task in `world` (over training and evaluation seeds), sorted by id.
    pub fn task_scores(&self, world: WorldId) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for o in self.outcomes.iter().filter(|o| o.world == world) {
            let e = acc.entry(&o.task_id).or_default();
            e.0 += usize::from(o.success());
            e.1 += 1;
        }
        acc.into_iter().map(|(t, (s, n))| (t.to_string(), s as f64 / n as f64)).collect()
    }

    pub fn env_rate(&self, world: WorldId) -> Option<f64> {
        self.per_env.get(world.as_str()).map(|r| r.rate)
    }
}

pub fn label(condition: &Condition, cfg_scale: f64) -> String {
    format!("{}@{}", condition.id(), cfg_scale)
}

/// A permutation test between two conditions' per-task scores in one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub world: WorldId,
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p: f64,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub crate_version: String,
    pub suite: SuiteConfig,
    pub conditions: Vec<ConditionReport>,
    /// Per condition label, rates relative to the specialist of each world at the same
    /// CFG scale.
    pub relative_to_specialist: BTreeMap<String, Normalized>,
    pub comparisons: Vec<Comparison>,
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn build(suite: &SuiteConfig, mut outcomes: BTreeMap<(Condition, u64), Vec<TaskOutcome>>, skipped: Vec<String>) -> Self {
        let mut conditions = Vec::new();
        for cond in &suite.conditions {
            for &lambda in &suite.cfg_scales {
                let Some(mut outs) = outcomes.remove(&(cond.clone(), lambda.to_bits())) else { continue };
                outs.sort_by(|a, b| (&a.task_id, a.run_seed, a.eval_seed).cmp(&(&b.task_id, b.run_seed, b.eval_seed)));
                conditions.extend(ConditionReport::new(cond.clone(), lambda, outs));
            }
        }
        let mut report = EvalReport {
            report_version: REPORT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            suite: suite.clone(),
            conditions,
            relative_to_specialist: BTreeMap::new(),
            comparisons: Vec::new(),
            skipped,
        };
        report.relative_to_specialist = report.normalize();
        report.comparisons = report.compare();
        report
    }

    /// Recomputes every statistic from the stored outcomes.
    pub fn rebuild(&self) -> Self {
        let outcomes = self
            .conditions
            .iter()
            .map(|c| ((c.condition.clone(), c.cfg_scale.to_bits()), c.outcomes.clone()))
            .collect();
        EvalReport::build(&self.suite, outcomes, self.skipped.clone())
    }

    pub fn find(&self, condition: &Condition, cfg_scale: f64) -> Option<&ConditionReport> {
        self.conditions
            .iter()
            .find(|c| &c.condition == condition && c.cfg_scale.to_bits() == cfg_scale.to_bits())
    }

    fn normalize(&self) -> BTreeMap<String, Normalized> {
        let mut out = BTreeMap::new();
        for &lambda in &self.suite.cfg_scales {
            let specialist: BTreeMap<String, f64> = self
                .suite
                .worlds
                .iter()
                .filter_map(|&w| {
                    let r = self.find(&Condition::Specialist { world: w }, lambda)?.env_rate(w)?;
                    Some((w.as_str().to_string(), r))
                })
                .collect();
            if specialist.is_empty() {
                continue;
            }
            for c in self.conditions.iter().filter(|c| c.cfg_scale.to_bits() == lambda.to_bits()) {
                let rates: BTreeMap<String, f64> = c.per_env.iter().map(|(k, r)| (k.clone(), r.rate)).collect();
                out.insert(c.label.clone(), normalize_vs_specialist(&rates, &specialist));
            }
        }
        out
    }

    fn compare(&self) -> Vec<Comparison> {
        let mut pairs = Vec::new();
        for &lambda in &self.suite.cfg_scales {
            for &w in &self.suite.worlds {
                pairs.push((w, Condition::Multiworld, Condition::Specialist { world: w }, lambda));
                pairs.push((w, Condition::Multiworld, Condition::NoLanguage, lambda));
                pairs.push((w, Condition::ZeroShot { held_out: w }, Condition::NoLanguage, lambda));
            }
        }
        let mut out = Vec::new();
        for (w, a, b, lambda) in pairs {
            let (Some(ra), Some(rb)) = (self.find(&a, lambda), self.find(&b, lambda)) else { continue };
            let sa: Vec<f64> = ra.task_scores(w).into_iter().map(|(_, s)| s).collect();
            let sb: Vec<f64> = rb.task_scores(w).into_iter().map(|(_, s)| s).collect();
            let Ok(res) = permutation_test(&sa, &sb, self.suite.n_resamples, self.suite.permutation_seed, self.suite.permutation_mode)
            else {
                continue;
            };
            out.push(Comparison {
                world: w,
                a: ra.label.clone(),
                b: rb.label.clone(),
                mean_a: sa.iter().sum::<f64>() / sa.len() as f64,
                mean_b: sb.iter().sum::<f64>() / sb.len() as f64,
                p: res.p,
                exhaustive: res.exhaustive,
            });
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let worlds: Vec<&str> = self.suite.worlds.iter().map(|w| w.as_str()).collect();
        let _ = writeln!(s, "evaluation report v{} (simkit {})", self.report_version, self.crate_version);
        let _ = writeln!(s, "training seeds {:?}, cfg scales {:?}", self.suite.run_seeds, self.suite.cfg_scales);
        let _ = writeln!(s);
        let _ = write!(s, "{:<28} {:>16}", "condition", "overall");
        for w in &worlds {
            let _ = write!(s, " {w:>16}");
        }
        let _ = writeln!(s);
        for c in &self.conditions {
            let _ = write!(s, "{:<28} {:>16}", c.label, fmt_rate(&c.overall));
            for w in &worlds {
                let cell = c.per_env.get(*w).map_or("-".to_string(), fmt_rate);
                let _ = write!(s, " {cell:>16}");
            }
            let _ = writeln!(s);
        }
        if !self.relative_to_specialist.is_empty() {
            let _ = writeln!(s, "\nrelative to specialist (%)");
            for c in &self.conditions {
                let Some(n) = self.relative_to_specialist.get(&c.label) else { continue };
                let _ = write!(s, "{:<28} {:>16}", c.label, n.aggregate.map_or("-".into(), |a| format!("{a:.1}")));
                for w in &worlds {
                    let cell = n.per_env.get(*w).map_or("-".into(), |v| format!("{v:.1}"));
                    let _ = write!(s, " {cell:>16}");
                }
                let _ = writeln!(s);
            }
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(s, "\npermutation tests on per-task success");
            for c in &self.comparisons {
                let _ = writeln!(
                    s,
                    "{:<10} {:<28} vs {:<28} {:.3} vs {:.3}  p={:.4}{}",
                    c.world.as_str(),
                    c.a,
                    c.b,
                    c.mean_a,
                    c.mean_b,
                    c.p,
                    if c.exhaustive { " (exact)" } else { "" }
                );
            }
        }
        let primary = self.suite.cfg_scales.last().copied();
        if let Some(lambda) = primary {
            if let Some(c) = self.find(&Condition::Multiworld, lambda) {
                let _ = writeln!(s, "\nper-skill success, {}", c.label);
                for (k, r) in &c.per_skill {
                    let _ = writeln!(s, "{k:<28} {:>16}", fmt_rate(r));
                }
            }
        }
        for k in &self.skipped {
            let _ = writeln!(s, "skipped: {k}");
        }
        s
    }

    /// Horizontal bars per condition and world, with 95% interval whiskers.
    pub fn render_svg(&self) -> String {
        const PALETTE: [&str; 3] = ["#4e79a7", "#f28e2b", "#59a14f"];
        let (left, bar_w, bar_h, gap) = (240.0, 400.0, 10.0, 8.0);
        let rows: usize = self.conditions.iter().map(|c| c.per_env.len()).sum();
        let height = 40.0 + rows as f64 * bar_h + self.conditions.len() as f64 * gap + 30.0;
        let width = left + bar_w + 140.0;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"10\">\n"
        );
        for t in 0..=4 {
            let x = left + bar_w * f64::from(t) / 4.0;
            let _ = writeln!(
                svg,
                "  <line x1=\"{x:.1}\" y1=\"30\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n  <text x=\"{x:.1}\" y=\"24\" text-anchor=\"middle\">{:.2}</text>",
                height - 20.0,
                f64::from(t) / 4.0
            );
        }
        let mut y = 40.0;
        for c in &self.conditions {
            let _ = writeln!(
                svg,
                "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                left - 8.0,
                y + bar_h * c.per_env.len() as f64 / 2.0 + 3.0,
                xml_escape(&c.label)
            );
            for (env, r) in &c.per_env {
                let color = WorldId::parse(env).map_or(PALETTE[0], |w| PALETTE[usize::from(w.code()) % PALETTE.len()]);
                let w = bar_w * r.rate;
                let lo = left + bar_w * (r.rate - r.ci95).max(0.0);
                let hi = left + bar_w * (r.rate + r.ci95).min(1.0);
                let mid = y + bar_h / 2.0;
                let _ = writeln!(
                    svg,
                    "  <rect x=\"{left:.1}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"{color}\"/>\n  <line x1=\"{lo:.1}\" y1=\"{mid:.1}\" x2=\"{hi:.1}\" y2=\"{mid:.1}\" stroke=\"#222\"/>",
                    bar_h - 1.0
                );
                y += bar_h;
            }
            y += gap;
        }
        for (i, w) in self.suite.worlds.iter().enumerate() {
            let x = left + bar_w + 20.0;
            let yy = 40.0 + i as f64 * 14.0;
            let _ = writeln!(
                svg,
                "  <rect x=\"{x:.1}\" y=\"{yy:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n  <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
                PALETTE[usize::from(w.code()) % PALETTE.len()],
                x + 14.0,
                yy + 9.0,
                w.as_str()
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Writes `report.json`, `report.txt` and `report.svg` into `dir`.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.txt"), self.render_text())?;
        std::fs::write(dir.join("report.svg"), self.render_svg())
    }
}

fn fmt_rate(r: &Rate) -> String {
    format!("{:.3}±{:.3}", r.rate, r.ci95)
}
