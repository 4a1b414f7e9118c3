use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cefr_cascade::corpus::{split_stats, CorpusError, CorpusSplit, LevelCounts};
use cefr_cascade::evaluator::{build_report, render_breakdown, render_table, MetricReport};
use cefr_cascade::exemplars::{exemplar_store_build, ExemplarStore, TransitionReport};
use cefr_cascade::fixtures::{shape_by_name, synthesize, ALL_SHAPES};
use cefr_cascade::levels::{LevelPath, Transition};
use cefr_cascade::orchestrator::{run_configuration, CascadeResult, ConfigFlags, RunInputs};
use cefr_cascade::pipeline::{all_transitions, path_transitions, STANDARD_GRID};
use cefr_cascade::planner::{plan, rris_report, LevelPair, PlanObjective, PlanResult, RrisReport};
use cefr_cascade::provenance::{sha256_hex, ProvenanceBlock};
use cefr_cascade::reward::{build_reward_matrix, RewardMatrix};
use cefr_cascade::validation::{OneStepContext, ValidationRecord};
use cefr_cascade::ProficiencyLevel;
use serde::{Deserialize, Serialize};

use crate::artifacts::{jsonl, parse_jsonl, pretty, read_verified, write_artifact, Loaded};
use crate::config::{LoadedConfig, Split};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

pub const MATRIX_FILE: &str = "matrix.json";
pub const RECORDS_FILE: &str = "validation_records.jsonl";
pub const PLANS_FILE: &str = "plans.json";
pub const STORE_FILE: &str = "exemplars.json";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::new(EXIT_CONFIG, e)
    }
}

pub type CmdResult<T = ()> = Result<T, CliError>;

/// `Y+Y+Y` becomes `YYY` in file names.
pub fn flags_tag(flags: ConfigFlags) -> String {
    flags.label().replace('+', "")
}

fn provenance(lc: &LoadedConfig, command: &str) -> ProvenanceBlock {
    ProvenanceBlock::new(command, &lc.canonical_bytes())
}

fn with_split(p: ProvenanceBlock, lc: &LoadedConfig, split: Split, name: &str) -> CmdResult<ProvenanceBlock> {
    let path = lc.split_path(split).context("split not configured")?;
    let bytes = std::fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(p.with_input(name, &bytes))
}

fn load(lc: &LoadedConfig, split: Split) -> CmdResult<Vec<cefr_cascade::corpus::LabeledSentence>> {
    lc.load(split).map_err(|e| {
        if let Some(CorpusError::Lines { path, errors }) = e.downcast_ref::<CorpusError>() {
            for err in errors {
                eprintln!("{}: {err}", path.display());
            }
        }
        CliError::new(EXIT_CONFIG, e)
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    #[serde(flatten)]
    pub counts: LevelCounts,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusReport {
    pub splits: Vec<SplitReport>,
    pub warnings: Vec<String>,
}

fn stats_table(report: &CorpusReport) -> String {
    let mut out = format!("{:<6}", "split");
    for l in ProficiencyLevel::ALL {
        out.push_str(&format!(" {:>6}", l.symbol()));
    }
    out.push_str(&format!(" {:>7}\n", "total"));
    for s in &report.splits {
        out.push_str(&format!("{:<6}", s.split));
        for l in ProficiencyLevel::ALL {
            out.push_str(&format!(" {:>6}", s.counts.get(l)));
        }
        out.push_str(&format!(" {:>7}\n", s.counts.total));
    }
    out
}

pub fn validate_corpus(lc: &LoadedConfig) -> CmdResult {
    lc.validate(&[])?;
    let mut splits = Vec::new();
    let mut loaded = CorpusSplit::default();
    let mut prov = provenance(lc, "validate-corpus");
    for (split, name) in [(Split::Train, "train"), (Split::Dev, "dev"), (Split::Test, "test")] {
        if lc.split_path(split).is_none() {
            continue;
        }
        lc.validate(&[split])?;
        let rows = load(lc, split)?;
        prov = with_split(prov, lc, split, name)?;
        splits.push(SplitReport {
            split: name.to_string(),
            counts: split_stats(&rows),
        });
        match split {
            Split::Train => loaded.train = rows,
            Split::Dev => loaded.dev = rows,
            Split::Test => loaded.test = rows,
        }
    }
    if splits.is_empty() {
        return Err(CliError::new(EXIT_CONFIG, anyhow!("no corpus split configured")));
    }
    let report = CorpusReport {
        splits,
        warnings: loaded.test_level_warnings(),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", stats_table(&report));
    write_artifact(&lc.output_dir(), "corpus_stats.json", &pretty(&report), prov)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmptyCell {
    pub transition: Transition,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewardReport {
    pub records: usize,
    pub failed_calls: usize,
    pub empty_cells: Vec<EmptyCell>,
}

pub fn build_rewards(lc: &LoadedConfig) -> CmdResult {
    lc.validate(&[Split::Train, Split::Dev])?;
    let train = load(lc, Split::Train)?;
    let dev = load(lc, Split::Dev)?;
    let backends = lc.backends()?;
    let c = &lc.config;
    let ctx = OneStepContext {
        train: &train,
        generator: backends.generator.as_ref(),
        estimator: backends.estimator.as_ref(),
        prompt: &c.prompt,
        profile: &c.generation,
        parallelism: lc.parallelism(),
    };
    let build = build_reward_matrix(&dev, &all_transitions(), &ctx, c.sample_cap);
    let report = RewardReport {
        records: build.records.len(),
        failed_calls: build.records.iter().filter(|r| r.error.is_some()).count(),
        empty_cells: build
            .empty
            .iter()
            .map(|(t, reason)| EmptyCell {
                transition: *t,
                reason: reason.clone(),
            })
            .collect(),
    };
    for e in &report.empty_cells {
        eprintln!("warning: empty cell {}: {}", e.transition, e.reason);
    }
    let matrix = build.matrix.normalize().map_err(|e| CliError::new(EXIT_BACKEND, e))?;

    let out = lc.output_dir();
    let prov = with_split(
        with_split(provenance(lc, "build-rewards"), lc, Split::Train, "train")?,
        lc,
        Split::Dev,
        "dev",
    )?;
    write_artifact(&out, RECORDS_FILE, &jsonl(&build.records), prov.clone())?;
    write_artifact(&out, "reward_report.json", &pretty(&report), prov.clone())?;
    let path = write_artifact(&out, MATRIX_FILE, matrix.to_json().as_bytes(), prov)?;
    println!(
        "reward matrix: {} cells, {} empty, {} of {} calls failed -> {}",
        matrix.cells.len(),
        report.empty_cells.len(),
        report.failed_calls,
        report.records,
        path.display()
    );
    if c.strict && !report.empty_cells.is_empty() {
        return Err(CliError::new(
            EXIT_CONFIG,
            anyhow!("strict mode: {} empty reward cell(s)", report.empty_cells.len()),
        ));
    }
    Ok(())
}

fn read_matrix(path: &Path) -> CmdResult<(Loaded, RewardMatrix)> {
    let loaded = read_verified(path)?;
    let matrix = RewardMatrix::from_json(&loaded.text).with_context(|| format!("invalid matrix {}", path.display()))?;
    if !matrix.normalized {
        return Err(CliError::new(
            EXIT_CONFIG,
            anyhow!("{} is not normalized", path.display()),
        ));
    }
    Ok((loaded, matrix))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFailure {
    pub source: ProficiencyLevel,
    pub target: ProficiencyLevel,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlansFile {
    pub objective: PlanObjective,
    pub plans: Vec<PlanResult>,
    pub failures: Vec<PlanFailure>,
    /// Over the pairs that planned successfully.
    pub rris: Option<RrisReport>,
}

fn requested_pairs(lc: &LoadedConfig) -> Vec<LevelPair> {
    ProficiencyLevel::SOURCES
        .iter()
        .flat_map(|&s| lc.config.targets.iter().filter(move |&&t| t < s).map(move |&t| (s, t)))
        .collect()
}

pub fn plan_cmd(lc: &LoadedConfig, matrix_path: Option<PathBuf>) -> CmdResult {
    lc.validate(&[])?;
    let matrix_path = matrix_path.unwrap_or_else(|| lc.output_dir().join(MATRIX_FILE));
    let (loaded, matrix) = read_matrix(&matrix_path)?;
    let objective = lc.objective();
    let mut plans = Vec::new();
    let mut failures = Vec::new();
    for (s, t) in requested_pairs(lc) {
        match plan(&matrix, s, t, objective) {
            Ok(p) => plans.push(p),
            Err(e) => failures.push(PlanFailure {
                source: s,
                target: t,
                error: e.to_string(),
            }),
        }
    }
    let pairs: Vec<LevelPair> = plans.iter().map(|p| (p.source, p.target)).collect();
    let paths: BTreeMap<LevelPair, LevelPath> = plans.iter().map(|p| ((p.source, p.target), p.path.clone())).collect();
    let rris = rris_report(&pairs, &paths).ok();
    let file = PlansFile {
        objective,
        plans,
        failures,
        rris,
    };
    for f in &file.failures {
        eprintln!("warning: {}->{}: {}", f.source, f.target, f.error);
    }
    if let Some(r) = &file.rris {
        print!("{}", r.to_table());
    }
    let prov = provenance(lc, "plan").with_input("matrix", loaded.text.as_bytes());
    write_artifact(&lc.output_dir(), PLANS_FILE, &pretty(&file), prov)?;
    if lc.config.strict && !file.failures.is_empty() {
        return Err(CliError::new(
            EXIT_INFEASIBLE,
            anyhow!("strict mode: {} pair(s) have no feasible path", file.failures.len()),
        ));
    }
    Ok(())
}

fn read_plans(path: &Path) -> CmdResult<(Loaded, PlansFile)> {
    let loaded = read_verified(path)?;
    let file = serde_json::from_str(&loaded.text).with_context(|| format!("invalid plans {}", path.display()))?;
    Ok((loaded, file))
}

pub fn harvest_exemplars(
    lc: &LoadedConfig,
    plans_path: Option<PathBuf>,
    records_path: Option<PathBuf>,
    fresh: bool,
) -> CmdResult {
    lc.validate(&[Split::Train, Split::Dev])?;
    let train = load(lc, Split::Train)?;
    let dev = load(lc, Split::Dev)?;
    let out = lc.output_dir();
    let dev_digest = sha256_hex(&std::fs::read(lc.split_path(Split::Dev).expect("validated"))?);
    let mut prov = with_split(
        with_split(provenance(lc, "harvest-exemplars"), lc, Split::Train, "train")?,
        lc,
        Split::Dev,
        "dev",
    )?;

    // transitions used by the plans, plus the direct ones for one-step rows
    let plans_path = plans_path.unwrap_or_else(|| out.join(PLANS_FILE));
    let mut transitions: Vec<Transition> = requested_pairs(lc)
        .into_iter()
        .filter_map(|(s, t)| Transition::new(s, t).ok())
        .collect();
    if plans_path.is_file() {
        let (loaded, plans) = read_plans(&plans_path)?;
        prov = prov.with_input("plans", loaded.text.as_bytes());
        transitions.extend(path_transitions(plans.plans.iter().map(|p| &p.path)));
    } else {
        eprintln!(
            "note: no plans at {}; harvesting every transition",
            plans_path.display()
        );
        transitions = all_transitions();
    }

    let records_path = records_path.unwrap_or_else(|| out.join(RECORDS_FILE));
    let reuse: Option<Vec<ValidationRecord>> =
        if fresh || lc.config.fresh_exemplar_generations || !records_path.is_file() {
            None
        } else {
            let loaded = read_verified(&records_path)?;
            let same_dev = loaded
                .provenance
                .as_ref()
                .and_then(|p| p.inputs.get("dev"))
                .is_some_and(|d| *d == dev_digest);
            if same_dev {
                prov = prov.with_input("validation_records", loaded.text.as_bytes());
                Some(parse_jsonl(&loaded)?)
            } else {
                eprintln!(
                    "note: {} was built from another dev split; generating fresh",
                    records_path.display()
                );
                None
            }
        };

    let backends = lc.backends()?;
    let c = &lc.config;
    let ctx = OneStepContext {
        train: &train,
        generator: backends.generator.as_ref(),
        estimator: backends.estimator.as_ref(),
        prompt: &c.prompt,
        profile: &c.generation,
        parallelism: lc.parallelism(),
    };
    let build = exemplar_store_build(
        &dev,
        &transitions,
        &ctx,
        backends.similarity.as_ref(),
        c.k,
        reuse.as_deref(),
    );
    for r in &build.report {
        println!(
            "{:<8} candidates {:>4}  selected {}  {}",
            r.transition.to_string(),
            r.candidates,
            r.selected,
            r.provenance.map(|p| format!("{p:?}")).unwrap_or_else(|| "none".into())
        );
    }
    let fatal: Vec<&TransitionReport> = build.fatal().collect();
    for f in &fatal {
        eprintln!("warning: {}: {}", f.transition, f.fatal.as_deref().unwrap_or(""));
    }
    write_artifact(&out, "exemplar_report.json", &pretty(&build.report), prov.clone())?;
    write_artifact(&out, STORE_FILE, build.store.to_json().as_bytes(), prov)?;
    if c.strict && !fatal.is_empty() {
        return Err(CliError::new(
            EXIT_CONFIG,
            anyhow!("strict mode: {} transition(s) have no exemplars", fatal.len()),
        ));
    }
    Ok(())
}

pub struct RunArgs {
    pub flags: Option<String>,
    pub matrix: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub failure_threshold: Option<f64>,
}

pub fn run_cmd(lc: &LoadedConfig, args: RunArgs) -> CmdResult {
    lc.validate(&[Split::Train, Split::Test])?;
    let flags = match &args.flags {
        Some(f) => ConfigFlags::parse(f).ok_or_else(|| anyhow!("--flags must look like Y+N+Y, got {f:?}"))?,
        None => lc.config.flags.into(),
    };
    let threshold = args.failure_threshold.unwrap_or(lc.config.failure_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(anyhow!("failure threshold must be within [0, 1]").into());
    }
    let out = lc.output_dir();
    let train = load(lc, Split::Train)?;
    let test = load(lc, Split::Test)?;
    let mut prov = with_split(
        with_split(provenance(lc, "run"), lc, Split::Train, "train")?,
        lc,
        Split::Test,
        "test",
    )?;

    let matrix = if flags.planning {
        let path = args.matrix.clone().unwrap_or_else(|| out.join(MATRIX_FILE));
        let (loaded, m) = read_matrix(&path)?;
        // plans written from an older matrix mean the pipeline is out of step
        let plans_path = out.join(PLANS_FILE);
        if plans_path.is_file() {
            let plans = read_verified(&plans_path)?;
            if let Some(recorded) = plans.provenance.as_ref().and_then(|p| p.inputs.get("matrix")) {
                if *recorded != loaded.digest() {
                    return Err(anyhow!(
                        "{} was planned from a different matrix than {}",
                        plans_path.display(),
                        path.display()
                    )
                    .into());
                }
            }
        }
        prov = prov.with_input("matrix", loaded.text.as_bytes());
        Some(m)
    } else {
        None
    };
    let store = if flags.semantic {
        let path = args.store.clone().unwrap_or_else(|| out.join(STORE_FILE));
        if path.is_file() {
            let loaded = read_verified(&path)?;
            prov = prov.with_input("exemplars", loaded.text.as_bytes());
            Some(ExemplarStore::from_json(&loaded.text).with_context(|| format!("invalid store {}", path.display()))?)
        } else if lc.config.allow_store_fallback {
            eprintln!("note: no exemplar store; semantic mode falls back to training sentences");
            None
        } else {
            return Err(anyhow!("semantic exemplars need a store; {} not found", path.display()).into());
        }
    } else {
        None
    };

    let backends = lc.backends()?;
    let mut settings = lc.pipeline().run_settings(flags);
    settings.allow_store_fallback = lc.config.allow_store_fallback;
    let inputs = RunInputs {
        test: &test,
        targets: &lc.config.targets,
        train: &train,
        matrix: matrix.as_ref(),
        store: store.as_ref(),
    };
    let output = run_configuration(inputs, &settings, &backends)?;
    let tag = flags_tag(flags);
    for f in &output.failures {
        eprintln!(
            "cascade failed: {} {}->{}: {}",
            f.input_id, f.source_level, f.target_level, f.error
        );
    }
    write_artifact(
        &out,
        &format!("results_{tag}.jsonl"),
        &jsonl(&output.results),
        prov.clone(),
    )?;
    write_artifact(
        &out,
        &format!("failures_{tag}.jsonl"),
        &jsonl(&output.failures),
        prov.clone(),
    )?;
    if output.results.is_empty() {
        return Err(CliError::new(
            EXIT_BACKEND,
            anyhow!("every cascade failed ({})", output.failures.len()),
        ));
    }
    let mut report = build_report(&output.results, backends.similarity.as_ref(), lc.parallelism())
        .map_err(|e| CliError::new(EXIT_BACKEND, e))?;
    report.label = Some(flags.label());
    write_artifact(&out, &format!("report_{tag}.json"), &pretty(&report), prov)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!(
        "{} cascades, {} failed, {} generation steps",
        output.attempted(),
        output.failures.len(),
        output.generation_steps()
    );
    if output.failure_rate() > threshold {
        return Err(CliError::new(
            EXIT_BACKEND,
            anyhow!(
                "failure rate {:.2}% exceeds threshold {:.2}%",
                100.0 * output.failure_rate(),
                100.0 * threshold
            ),
        ));
    }
    Ok(())
}

pub fn evaluate(lc: &LoadedConfig, results: &[PathBuf], label: Option<String>, out: Option<PathBuf>) -> CmdResult {
    lc.validate(&[])?;
    let mut prov = provenance(lc, "evaluate");
    let mut rows: Vec<CascadeResult> = Vec::new();
    for (i, path) in results.iter().enumerate() {
        let loaded = read_verified(path)?;
        prov = prov.with_input(format!("results_{i}"), loaded.text.as_bytes());
        rows.extend(parse_jsonl::<CascadeResult>(&loaded)?);
    }
    let backends = lc.backends()?;
    let mut report = build_report(&rows, backends.similarity.as_ref(), lc.parallelism())
        .map_err(|e| CliError::new(EXIT_BACKEND, e))?;
    report.label = label;
    let out = out.unwrap_or_else(|| lc.output_dir().join("report_eval.json"));
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = out
        .file_name()
        .context("--out needs a file name")?
        .to_string_lossy()
        .into_owned();
    write_artifact(&dir, &name, &pretty(&report), prov)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    Ok(())
}

pub fn report_cmd(reports: &[PathBuf], breakdown: bool, out: Option<PathBuf>) -> CmdResult {
    if reports.is_empty() {
        return Err(anyhow!("no reports given").into());
    }
    let mut prov = ProvenanceBlock::new("report", b"");
    let mut parsed: Vec<MetricReport> = Vec::new();
    for (i, path) in reports.iter().enumerate() {
        let loaded = read_verified(path)?;
        prov = prov.with_input(format!("report_{i}"), loaded.text.as_bytes());
        let mut r: MetricReport =
            serde_json::from_str(&loaded.text).with_context(|| format!("invalid report {}", path.display()))?;
        if r.label.is_none() {
            r.label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        parsed.push(r);
    }
    let mut text = render_table(&parsed);
    if breakdown {
        for r in &parsed {
            text.push('\n');
            text.push_str(&format!("{}\n", r.label.as_deref().unwrap_or("run")));
            text.push_str(&render_breakdown(r));
        }
    }
    print!("{text}");
    if let Some(out) = out {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = out
            .file_name()
            .context("--out needs a file name")?
            .to_string_lossy()
            .into_owned();
        write_artifact(&dir, &name, text.as_bytes(), prov)?;
    }
    Ok(())
}

pub struct MockE2eArgs {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub shape: String,
    pub objective: Option<cefr_cascade::planner::ObjectiveMode>,
    pub flags: Option<String>,
    pub parallelism: usize,
}

/// Synthesizes a corpus, writes a mock config next to it and drives every
/// other subcommand through that config.
pub fn mock_e2e(args: MockE2eArgs) -> CmdResult {
    let shape = shape_by_name(&args.shape).ok_or_else(|| {
        let known: Vec<&str> = ALL_SHAPES.iter().map(|s| s.name).collect();
        anyhow!("unknown fixture shape {:?}; known: {}", args.shape, known.join(", "))
    })?;
    let grid: Vec<ConfigFlags> = match &args.flags {
        Some(f) => vec![ConfigFlags::parse(f).ok_or_else(|| anyhow!("--flags must look like Y+N+Y, got {f:?}"))?],
        None => STANDARD_GRID.to_vec(),
    };
    let dir = &args.out_dir;
    let corpus = synthesize(&shape, args.seed);
    let corpus_dir = dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir).with_context(|| format!("cannot create {}", corpus_dir.display()))?;
    for (name, rows) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        cefr_cascade::corpus::save_split(&corpus_dir.join(format!("{name}.jsonl")), rows)?;
    }

    let mut config = crate::config::RunConfig::default();
    config.corpus.train = Some("corpus/train.jsonl".into());
    config.corpus.dev = Some("corpus/dev.jsonl".into());
    config.corpus.test = Some("corpus/test.jsonl".into());
    config.corpus.language = shape.language.into();
    config.corpus.source_corpus = format!("synthetic-{}", shape.name);
    config.output_dir = "artifacts".into();
    config.parallelism = args.parallelism;
    config.failure_threshold = 0.0;
    if let Some(o) = args.objective {
        config.objective = o;
    }
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, toml::to_string(&config)?)?;
    let lc = LoadedConfig::from_file(&config_path)?;

    println!("== validate-corpus");
    validate_corpus(&lc)?;
    println!("== build-rewards");
    build_rewards(&lc)?;
    println!("== plan");
    plan_cmd(&lc, None)?;
    println!("== harvest-exemplars");
    harvest_exemplars(&lc, None, None, false)?;
    let mut reports = Vec::new();
    for flags in grid {
        println!("== run {}", flags.label());
        run_cmd(
            &lc,
            RunArgs {
                flags: Some(flags.label()),
                matrix: None,
                store: None,
                failure_threshold: None,
            },
        )?;
        reports.push(lc.output_dir().join(format!("report_{}.json", flags_tag(flags))));
    }
    println!("== report");
    report_cmd(&reports, true, Some(lc.output_dir().join("report.txt")))
}
