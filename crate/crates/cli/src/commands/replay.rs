use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use rgs_core::reasoner::{
    run_scenario, Backend, CycleLog, Fallback, RemoteBackend, RemoteConfig, ReplayReport, Scenario, ScriptedBackend,
};

use super::to_json;
use crate::config::{BackendKind, ReplaySection, RunConfig};
use crate::failure::{Classify, Failure};
use crate::manifest::ManifestBuilder;
use crate::Common;

pub const TABLE_FILE: &str = "table.csv";
pub const TABLE_MD_FILE: &str = "table.md";
pub const TRIALS_FILE: &str = "trials.json";

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of scenario JSON files.
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Scripted response set to replay.
    #[arg(long)]
    pub script: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

impl ReplayArgs {
    fn apply(&self, r: &mut ReplaySection) {
        if let Some(b) = self.backend {
            r.backend = b;
        }
        if let Some(s) = &self.script {
            r.script = s.clone();
        }
        if let Some(e) = &self.endpoint {
            r.endpoint = Some(e.clone());
        }
        if let Some(m) = &self.model {
            r.model = Some(m.clone());
        }
        if let Some(t) = self.timeout_ms {
            r.timeout_ms = t;
        }
        if let Some(i) = &self.image_root {
            r.image_root = Some(i.clone());
        }
    }
}

/// Per-group success table with the columns regularity, clips, correct and
/// success rate in percent (blank for a group without clips).
pub fn table_csv(report: &ReplayReport) -> String {
    let mut out = String::from("regularity,clips,correct,success_rate\n");
    for (g, s) in &report.groups {
        let rate = s.success_rate().map(|r| format!("{:.1}", 100.0 * r)).unwrap_or_default();
        out.push_str(&format!("{g:?},{},{},{rate}\n", s.trials, s.correct));
    }
    out
}

fn scenario_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing scenarios in {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn remote_config(r: &ReplaySection, scenarios: &Path) -> anyhow::Result<RemoteConfig> {
    let endpoint = r.endpoint.clone().context("the remote backend needs an endpoint")?;
    let model = r.model.clone().context("the remote backend needs a model name")?;
    let token = std::env::var(&r.token_env).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        log::warn!("{} is not set; sending requests without authorization", r.token_env);
    }
    Ok(RemoteConfig {
        endpoint,
        token,
        model,
        timeout: Duration::from_millis(r.timeout_ms),
        max_tokens: r.max_tokens,
        image_root: Some(r.image_root.clone().unwrap_or_else(|| scenarios.to_path_buf())),
    })
}

fn jsonl(logs: &[CycleLog]) -> anyhow::Result<String> {
    let mut out = String::new();
    for l in logs {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn run(args: ReplayArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let seed = cfg.resolve_seed(args.common.seed);
    args.apply(&mut cfg.replay);
    let r = &cfg.replay;
    let remote = match r.backend {
        BackendKind::Remote => Some(remote_config(r, &args.scenarios).class(Failure::Config)?),
        BackendKind::Scripted => None,
    };

    let snapshot = serde_json::json!({ "scenarios": args.scenarios, "replay": r });
    let mut m = ManifestBuilder::new("replay", seed, snapshot, &args.common.out);
    let files = scenario_files(&args.scenarios).class(Failure::Data)?;
    let mut scenarios = Vec::new();
    for path in files {
        m.input(&path).class(Failure::Data)?;
        match Scenario::load(&path) {
            Ok(s) => scenarios.push(s),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                m.note(format!("excluded malformed scenario {}: {e}", path.display()));
            }
        }
    }
    if scenarios.is_empty() {
        return Err(anyhow::anyhow!("no usable scenarios in {}", args.scenarios.display()).context(Failure::Data));
    }

    let mut report = ReplayReport::new();
    let (mut queried, mut failed) = (0, 0);
    for s in &scenarios {
        let mut backend: Box<dyn Backend> = match &remote {
            Some(c) => Box::new(RemoteBackend::new(c.clone()).class(Failure::Backend)?),
            None => match s.scripts.get(&r.script) {
                Some(script) => Box::new(ScriptedBackend::new(script.clone())),
                None => {
                    log::warn!("scenario `{}` has no script `{}`; skipped", s.name, r.script);
                    m.note(format!("scenario {} has no script {}; skipped", s.name, r.script));
                    continue;
                }
            },
        };
        let logs = m.time(&format!("scenario:{}", s.name), || run_scenario(s, backend.as_mut()));
        for l in &logs {
            match &l.fallback {
                Some(Fallback::EmptyScene) => {}
                Some(Fallback::Backend { .. }) => {
                    queried += 1;
                    failed += 1;
                }
                _ => queried += 1,
            }
        }
        m.write(&format!("logs/{}.jsonl", s.name), jsonl(&logs)?.as_bytes())?;
        report.record(s, &logs);
    }

    m.write(TABLE_FILE, table_csv(&report).as_bytes())?;
    m.write(TABLE_MD_FILE, report.table().as_bytes())?;
    m.write(TRIALS_FILE, &to_json(&report)?)?;
    let all_failed = queried > 0 && failed == queried;
    if all_failed {
        m.note(format!("the backend failed on all {queried} queried cycles"));
    }
    m.finish()?;
    print!("{}", report.table());
    if all_failed {
        return Err(anyhow::anyhow!("backend failed on every one of {queried} cycles").context(Failure::Backend));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgs_core::reasoner::{GroupStats, Regularity};

    #[test]
    fn table_schema() {
        let mut report = ReplayReport::new();
        report.groups.insert(Regularity::H2, GroupStats { trials: 3, correct: 2 });
        let csv = table_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "regularity,clips,correct,success_rate");
        assert_eq!(lines[1], "H1,0,0,");
        assert_eq!(lines[2], "H2,3,2,66.7");
        assert_eq!(lines.len(), 5);
    }
}
