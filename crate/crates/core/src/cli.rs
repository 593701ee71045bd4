//! The `vet` command line.
//!
//! Exit codes: 0 clean, 1 violations (any MASK or BLOCK, or an invalid
//! policy), 2 operational failure or usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attribution::{index_corpus, load_corpus, DEFAULT_SHINGLE_WIDTH};
use crate::config::{Config, ENV_CONFIG};
use crate::gateway::Gateway;
use crate::keywords::{build_lexicon, rank_terms, DocLabel};
use crate::model::{Decision, Direction, Finding, RuleFiring, ShieldRequest, Span};
use crate::policy::{CategoryCatalog, PolicyTemplate};
use crate::store::open_store;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Fields of a structured contribution record that are vetted separately.
pub const VETTED_FIELDS: [&str; 3] = ["context", "question", "answer"];

#[derive(Debug, Parser)]
#[command(name = "vet", version, about = "Guardrail gateway and batch vetting tool")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Annotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Prompt,
    Response,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = ENV_CONFIG)]
        config: PathBuf,
    },
    /// Vet files or directories of contribution records.
    #[command(name = "vet-files", alias = "check")]
    VetFiles {
        #[arg(long = "input", short, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long = "policy", default_value = "default")]
        policies: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "default")]
        jurisdiction: String,
        #[arg(long, value_enum, default_value = "prompt")]
        direction: DirectionArg,
    },
    /// Build a shingle index over a corpus directory or JSONL file.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHINGLE_WIDTH)]
        k: usize,
        /// Store directory that receives the index artifact.
        #[arg(long, default_value = "store")]
        store: PathBuf,
        #[arg(long, default_value = "corpus")]
        id: String,
        /// Also write the index to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a keyword lexicon from labeled documents.
    TrainLexicon {
        /// JSONL of {"text", "label"} or TSV of `label<TAB>text`.
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long, default_value_t = 20)]
        top_n: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate policy files.
    PolicyValidate {
        #[arg(long = "file", required = true, num_args = 1..)]
        files: Vec<PathBuf>,
    },
}

/// One finding that holds the merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub file: String,
    pub field: String,
    pub span: Option<Span>,
    pub category: String,
    pub label: String,
    pub score: f64,
    pub action: Decision,
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub field: String,
    pub decision: Decision,
    pub warnings: Vec<String>,
    pub findings: Vec<Finding>,
    pub audit: Vec<RuleFiring>,
    pub degraded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub fields: Vec<FieldReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VetReport {
    pub files: Vec<FileReport>,
    pub annotations: Vec<Annotation>,
    pub exit_code: i32,
}

fn collect_inputs(inputs: &[PathBuf]) -> Vec<PathBuf> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) {
        match std::fs::read_dir(p) {
            Ok(entries) if p.is_dir() => {
                for e in entries.filter_map(Result::ok) {
                    walk(&e.path(), out);
                }
            }
            _ => out.push(p.to_path_buf()),
        }
    }
    let mut out = Vec::new();
    for p in inputs {
        walk(p, &mut out);
    }
    out.sort();
    out.dedup();
    out
}

/// Pulls `context` / `question` / `answer` strings out of a YAML or JSON
/// record, keyed by their path in the document. Anything else (or a record
/// without those keys) is vetted whole as `text`.
pub fn extract_fields(path: &Path, raw: &str) -> Vec<(String, String)> {
    fn walk(v: &serde_yaml::Value, at: &str, out: &mut Vec<(String, String)>) {
        match v {
            serde_yaml::Value::Mapping(m) => {
                for (k, child) in m {
                    let Some(key) = k.as_str() else { continue };
                    let here = if at.is_empty() {
                        key.to_string()
                    } else {
                        format!("{at}.{key}")
                    };
                    match child {
                        serde_yaml::Value::String(s) if VETTED_FIELDS.contains(&key) => {
                            out.push((here, s.clone()))
                        }
                        _ => walk(child, &here, out),
                    }
                }
            }
            serde_yaml::Value::Sequence(items) => {
                for (i, child) in items.iter().enumerate() {
                    walk(child, &format!("{at}[{i}]"), out);
                }
            }
            _ => {}
        }
    }
    let structured = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e, "yaml" | "yml" | "json"));
    let mut fields = Vec::new();
    if structured {
        if let Ok(v) = serde_yaml::from_str::<serde_yaml::Value>(raw) {
            walk(&v, "", &mut fields);
        }
    }
    if fields.is_empty() {
        fields.push(("text".to_string(), raw.to_string()));
    }
    fields
}

/// The policy-side record of what a field's verdict holds on.
fn annotations_for(file: &str, field: &str, text: &str, report: &FieldReport) -> Vec<Annotation> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for firing in &report.audit {
        if firing.action < Decision::Mask {
            continue;
        }
        let rule = format!("{}/{}", firing.policy_id, firing.rule_id);
        if firing.matched.is_empty() {
            out.push(Annotation {
                file: file.to_string(),
                field: field.to_string(),
                span: None,
                category: "gateway".to_string(),
                label: firing.rule_id.clone(),
                score: 1.0,
                action: firing.action,
                rule,
                excerpt: firing.message.clone(),
            });
            continue;
        }
        for &idx in &firing.matched {
            if !seen.insert(idx) {
                continue;
            }
            let f = &report.findings[idx];
            out.push(Annotation {
                file: file.to_string(),
                field: field.to_string(),
                span: f.span,
                category: f.category.clone(),
                label: f.label.clone(),
                score: f.score,
                action: firing.action,
                rule: rule.clone(),
                excerpt: f
                    .span
                    .and_then(|s| crate::model::slice(text, s).ok())
                    .map(str::to_string),
            });
        }
    }
    out
}

pub struct VetOptions {
    pub policies: Vec<String>,
    pub jurisdiction: String,
    pub direction: Direction,
}

/// Vets every input; per-file errors are reported, not fatal.
pub fn vet_files(gateway: &Gateway, inputs: &[PathBuf], opts: &VetOptions) -> VetReport {
    let files = collect_inputs(inputs);
    let mut reports = Vec::with_capacity(files.len());
    let mut annotations = Vec::new();
    for path in &files {
        let name = path.display().to_string();
        let raw = match std::fs::read_to_string(path) {
            Ok(raw) => raw,
            Err(e) => {
                reports.push(FileReport {
                    file: name,
                    decision: None,
                    error: Some(format!("IO_FAILURE: {e}")),
                    fields: Vec::new(),
                });
                continue;
            }
        };
        let mut fields = Vec::new();
        let mut error = None;
        for (field, text) in extract_fields(path, &raw) {
            if text.trim().is_empty() {
                continue;
            }
            let req = ShieldRequest::new(text.clone(), opts.direction)
                .with_policies(opts.policies.iter().cloned())
                .with_jurisdiction(opts.jurisdiction.clone());
            match gateway.shield_blocking(req) {
                Ok(v) => {
                    let report = FieldReport {
                        field: field.clone(),
                        decision: v.decision,
                        warnings: v.warnings,
                        findings: v.findings,
                        audit: v.audit,
                        degraded: v.degraded,
                    };
                    annotations.extend(annotations_for(&name, &field, &text, &report));
                    fields.push(report);
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let decision = if error.is_some() {
            None
        } else {
            Some(fields.iter().map(|f| f.decision).fold(Decision::Pass, Decision::combine))
        };
        reports.push(FileReport {
            file: name,
            decision,
            error,
            fields,
        });
    }
    annotations.sort_by(|a, b| {
        (&a.file, &a.field, a.span.map(|s| (s.start, s.end)), &a.category)
            .cmp(&(&b.file, &b.field, b.span.map(|s| (s.start, s.end)), &b.category))
    });
    let vetted: Vec<Decision> = reports.iter().filter_map(|r| r.decision).collect();
    let exit_code = if vetted.is_empty() {
        EXIT_FAILURE
    } else if vetted.iter().any(|d| *d >= Decision::Mask) {
        EXIT_VIOLATION
    } else {
        EXIT_CLEAN
    };
    VetReport {
        files: reports,
        annotations,
        exit_code,
    }
}

pub fn render_text(report: &VetReport, out: &mut dyn Write) -> std::io::Result<()> {
    for f in &report.files {
        match (&f.decision, &f.error) {
            (_, Some(e)) => writeln!(out, "{}: ERROR {e}", f.file)?,
            (Some(d), None) => writeln!(out, "{}: {d}", f.file)?,
            (None, None) => writeln!(out, "{}: ERROR", f.file)?,
        }
        for field in &f.fields {
            writeln!(out, "  {}: {}", field.field, field.decision)?;
            for w in &field.warnings {
                writeln!(out, "    warning: {w}")?;
            }
        }
    }
    for a in &report.annotations {
        let at = a
            .span
            .map_or_else(|| "-".to_string(), |s| format!("{}..{}", s.start, s.end));
        writeln!(
            out,
            "{} {} [{at}] {} {} ({})",
            a.file, a.field, a.category, a.action, a.rule
        )?;
    }
    let held = report
        .files
        .iter()
        .filter(|f| f.decision.is_some_and(|d| d >= Decision::Mask))
        .count();
    let errors = report.files.iter().filter(|f| f.error.is_some()).count();
    writeln!(
        out,
        "{} files, {held} held, {errors} errors, {} annotations",
        report.files.len(),
        report.annotations.len()
    )
}

#[derive(Deserialize)]
struct LabeledRecord {
    text: String,
    label: DocLabel,
}

/// Reads JSONL `{"text", "label"}` records, or `label<TAB>text` lines.
pub fn read_labeled(path: &Path) -> Result<Vec<(String, DocLabel)>, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut docs = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let doc = if line.starts_with('{') {
            let r: LabeledRecord = serde_json::from_str(line)
                .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
            (r.text, r.label)
        } else {
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| format!("{}:{}: expected label<TAB>text", path.display(), n + 1))?;
            let label = match label.trim().to_ascii_lowercase().as_str() {
                "positive" | "pos" | "1" => DocLabel::Positive,
                "negative" | "neg" | "0" => DocLabel::Negative,
                other => return Err(format!("{}:{}: unknown label `{other}`", path.display(), n + 1)),
            };
            (text.to_string(), label)
        };
        docs.push(doc);
    }
    Ok(docs)
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn load_gateway(config: Option<&Path>) -> Result<Gateway, String> {
    let cfg = Config::resolve(config)
        .map_err(|e| e.to_string())?
        .unwrap_or_default();
    cfg.build_gateway().map_err(|e| e.to_string())
}

fn cmd_serve(config: &Path, err: &mut dyn Write) -> i32 {
    let cfg = match Config::resolve(Some(config)) {
        Ok(Some(cfg)) => cfg,
        Ok(None) => unreachable!("path given"),
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_FAILURE;
        }
    };
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "runtime: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = rt.block_on(async {
        let handle = crate::server::serve(&cfg).await?;
        tracing::info!(addr = %handle.addr, "shieldgate ready");
        shutdown_signal().await;
        tracing::info!("draining in-flight requests");
        handle.shutdown().await
    });
    match result {
        Ok(()) => EXIT_CLEAN,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_FAILURE
        }
    }
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_CLEAN };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match cli.command {
        Command::Serve { config } => cmd_serve(&config, err),
        Command::VetFiles {
            inputs,
            policies,
            format,
            config,
            jurisdiction,
            direction,
        } => {
            let gateway = match load_gateway(config.as_deref()) {
                Ok(g) => g,
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    return EXIT_FAILURE;
                }
            };
            let opts = VetOptions {
                policies,
                jurisdiction,
                direction: match direction {
                    DirectionArg::Prompt => Direction::Prompt,
                    DirectionArg::Response => Direction::Response,
                },
            };
            let report = vet_files(&gateway, &inputs, &opts);
            let written = match format {
                Format::Text => render_text(&report, out),
                Format::Json => serde_json::to_writer_pretty(&mut *out, &report)
                    .map_err(std::io::Error::other)
                    .and_then(|_| writeln!(out)),
                Format::Annotations => report.annotations.iter().try_for_each(|a| {
                    serde_json::to_writer(&mut *out, a).map_err(std::io::Error::other)?;
                    writeln!(out)
                }),
            };
            for f in report.files.iter().filter(|f| f.error.is_some()) {
                let _ = writeln!(err, "{}: {}", f.file, f.error.as_deref().unwrap_or(""));
            }
            if written.is_err() {
                return EXIT_FAILURE;
            }
            report.exit_code
        }
        Command::Index {
            corpus,
            k,
            store,
            id,
            output,
        } => {
            let result = (|| -> Result<(usize, usize), String> {
                let docs = load_corpus(&corpus).map_err(|e| e.to_string())?;
                let index = index_corpus(docs, k).map_err(|e| e.to_string())?;
                let store = open_store(&store).map_err(|e| e.to_string())?;
                store.put_index(&id, &index).map_err(|e| e.to_string())?;
                if let Some(path) = &output {
                    std::fs::write(path, index.to_bytes())
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                }
                Ok((index.doc_count(), index.shingle_count()))
            })();
            match result {
                Ok((docs, shingles)) => {
                    let _ = writeln!(out, "indexed {docs} documents, {shingles} shingles (k = {k})");
                    EXIT_CLEAN
                }
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    EXIT_FAILURE
                }
            }
        }
        Command::TrainLexicon {
            labeled,
            category,
            top_n,
            output,
        } => {
            let result = (|| -> Result<String, String> {
                let docs = read_labeled(&labeled)?;
                let lexicon = build_lexicon(&docs, &category, top_n).map_err(|e| e.to_string())?;
                let ranked = rank_terms(&docs).map_err(|e| e.to_string())?;
                let toml = lexicon.to_toml().map_err(|e| e.to_string())?;
                if let Some(path) = &output {
                    std::fs::write(path, &toml).map_err(|e| format!("{}: {e}", path.display()))?;
                }
                let mut listing = String::new();
                for t in ranked.iter().filter(|t| lexicon.keywords.contains_key(&t.term)) {
                    listing.push_str(&format!("{}\t{:.12}\n", t.term, t.margin));
                }
                if output.is_none() {
                    listing.push_str(&toml);
                }
                Ok(listing)
            })();
            match result {
                Ok(s) => {
                    let _ = write!(out, "{s}");
                    EXIT_CLEAN
                }
                Err(e) => {
                    let _ = writeln!(err, "{e}");
                    EXIT_FAILURE
                }
            }
        }
        Command::PolicyValidate { files } => {
            let catalog = CategoryCatalog::builtin();
            let mut code = EXIT_CLEAN;
            let mut ids: BTreeMap<String, PathBuf> = BTreeMap::new();
            for file in files {
                let raw = match std::fs::read_to_string(&file) {
                    Ok(raw) => raw,
                    Err(e) => {
                        let _ = writeln!(err, "{}: IO_FAILURE: {e}", file.display());
                        code = EXIT_FAILURE;
                        continue;
                    }
                };
                match PolicyTemplate::from_toml(&raw, &catalog) {
                    Ok(t) => {
                        if let Some(prev) = ids.insert(t.policy_id.clone(), file.clone()) {
                            let _ = writeln!(
                                err,
                                "{}: DUPLICATE_POLICY_ID: `{}` also defined in {}",
                                file.display(),
                                t.policy_id,
                                prev.display()
                            );
                            code = code.max(EXIT_VIOLATION);
                        } else {
                            let _ = writeln!(
                                out,
                                "{}: ok ({} rules, policy `{}`)",
                                file.display(),
                                t.rules.len(),
                                t.policy_id
                            );
                        }
                    }
                    Err(e) => {
                        let _ = writeln!(err, "{}: {e}", file.display());
                        code = code.max(EXIT_VIOLATION);
                    }
                }
            }
            code
        }
    }
}

/// Entry point of the `vet` binary.
pub fn main() -> std::process::ExitCode {
    init_tracing();
    let code = run(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::ExitCode::from(code as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn extract_nested_fields() {
        let raw = "created_by: x\nseed_examples:\n  - context: Some text.\n    questions_and_answers:\n      - question: Who?\n        answer: Me.\n";
        let fields = extract_fields(Path::new("q.yaml"), raw);
        let names: Vec<_> = fields.iter().map(|(f, _)| f.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "seed_examples[0].context",
                "seed_examples[0].questions_and_answers[0].question",
                "seed_examples[0].questions_and_answers[0].answer",
            ]
        );
        assert_eq!(extract_fields(Path::new("n.txt"), "hi")[0].0, "text");
    }

    #[test]
    fn vet_clean_and_planted() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            std::fs::write(
                dir.path().join(format!("clean{i}.yaml")),
                "context: The river flows north.\nquestion: Where does it flow?\nanswer: North.\n",
            )
            .unwrap();
        }
        let d = dir.path().to_str().unwrap();
        let (code, out, _) = run_args(&["vet", "vet-files", "--input", d]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("3 files, 0 held"));

        std::fs::write(
            dir.path().join("bad.yaml"),
            "context: Notes.\nquestion: Who to mail?\nanswer: Write to jane.doe@example.com today.\n",
        )
        .unwrap();
        let (code, out, _) = run_args(&["vet", "check", "--input", d, "--format", "annotations"]);
        assert_eq!(code, 1);
        let lines: Vec<Annotation> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].field, "answer");
        assert_eq!(lines[0].span, Some(Span::new(9, 29)));
        assert_eq!(lines[0].category, "pii.email_address");
    }

    #[test]
    fn unreadable_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.txt"), "Nothing to see.").unwrap();
        let missing = dir.path().join("missing.txt");
        let (code, _, err) = run_args(&[
            "vet",
            "vet-files",
            "--input",
            dir.path().join("ok.txt").to_str().unwrap(),
            "--input",
            missing.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert!(err.contains("missing.txt"));
        let (code, _, _) = run_args(&["vet", "vet-files", "--input", missing.to_str().unwrap()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn usage_errors_exit_2() {
        std::env::remove_var(ENV_CONFIG);
        assert_eq!(run_args(&["vet", "serve"]).0, 2);
        assert_eq!(run_args(&["vet", "serve", "--config", "/no/such/file.toml"]).0, 2);
        assert_eq!(run_args(&["vet", "bogus"]).0, 2);
    }

    #[test]
    fn policy_validate_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.toml");
        std::fs::write(
            &bad,
            "policy_id = \"b\"\ndefault_action = \"PASS\"\n[[rules]]\nid = \"x\"\nwhen = 'score >'\naction = \"WARN\"\n",
        )
        .unwrap();
        let (code, _, err) = run_args(&["vet", "policy-validate", "--file", bad.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert!(err.contains("MALFORMED_PREDICATE at line 5"), "{err}");
    }

    #[test]
    fn train_lexicon_matches_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let labeled = dir.path().join("toy.tsv");
        std::fs::write(
            &labeled,
            "positive\tcasino poker bets\npositive\tpoker night fun\nnegative\tweather is sunny\n",
        )
        .unwrap();
        let out_file = dir.path().join("lex.toml");
        let (code, out, err) = run_args(&[
            "vet",
            "train-lexicon",
            "--labeled",
            labeled.to_str().unwrap(),
            "--category",
            "gambling",
            "--top-n",
            "2",
            "--output",
            out_file.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        let rows: Vec<(&str, f64)> = out
            .lines()
            .map(|l| {
                let (t, m) = l.split_once('\t').unwrap();
                (t, m.parse().unwrap())
            })
            .collect();
        assert_eq!(rows[0].0, "poker");
        assert_eq!(rows[1].0, "bets");
        assert!((rows[0].1 - 0.4292273574839270).abs() < 1e-11);
        assert!((rows[1].1 - 0.2821911967599909).abs() < 1e-11);
        let lex = crate::keywords::CategoryLexicon::from_path(&out_file).unwrap();
        assert_eq!(lex.keywords.len(), 2);
    }
}
