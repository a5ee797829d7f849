use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dypol_core::bench::{self, BenchConfig, DatasetProfile, Testbed};
use dypol_core::eval::{eval_node_traced, EvalTrace};
use dypol_core::io::{self, parse_update_events, serialize_response, FormatError};
use dypol_core::pap::{PapError, PapSnapshot};
use dypol_core::space::{
    check_equivalence, AtomTable, Domains, Encoder, Encoding, Mutation, SpaceError, DEFAULT_ENUMERATION_BOUND,
};
use dypol_core::update::{
    EngineConfig, EngineMode, FnService, ObligationOutcome, UpdateEngine, UpdateError,
};
use dypol_core::*;

mod sessions;

use sessions::SessionFile;

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  decision was Deny (evaluate --strict), or verify found a counterexample
  2  usage error
  3  input could not be parsed
  4  engine error";

#[derive(Parser)]
#[command(name = "dypol", version, about = "Policy decisions that follow live policy updates", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one request against a policy store.
    Evaluate(EvaluateArgs),
    /// Apply policy changes and re-evaluate recorded sessions.
    Update(UpdateArgs),
    /// Run a benchmark testbed through both engines and print CSV.
    Bench(BenchArgs),
    /// Check the decision-space encoding against direct evaluation.
    Verify(VerifyArgs),
    /// Print the decision-space formulas of each tree.
    Encode(EncodeArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of policy XML files.
    #[arg(long)]
    pap: PathBuf,
    /// Request JSON file.
    #[arg(long)]
    request: PathBuf,
    /// Include per-node decisions and step counters.
    #[arg(long)]
    trace: bool,
    /// Exit 1 when the decision is Deny.
    #[arg(long)]
    strict: bool,
    /// Append the session to this file for later `update` runs.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Session id used with --record.
    #[arg(long)]
    session: Option<String>,
}

#[derive(Args)]
struct UpdateArgs {
    #[arg(long)]
    pap: PathBuf,
    /// Change events, one JSON object per line.
    #[arg(long)]
    events: PathBuf,
    /// Session file written by `evaluate --record`.
    #[arg(long)]
    sessions: PathBuf,
    /// JSON object of attribute id to value answering attribute requests;
    /// attributes not listed time out.
    #[arg(long)]
    obligations: Option<PathBuf>,
    /// Re-evaluate every session from scratch after each change.
    #[arg(long)]
    baseline: bool,
    /// Print each affected session's step counters.
    #[arg(long)]
    trace: bool,
    /// Save the changed store, its journal and the sessions back to disk.
    #[arg(long)]
    write: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Profile JSON file, or the name of a built-in profile.
    #[arg(long)]
    profile: String,
    /// Testbed name, or `all`.
    #[arg(long)]
    testbed: String,
    #[arg(long, default_value_t = 50)]
    updates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    sessions: usize,
    /// Also write whitespace-separated medians for plotting.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    pap: PathBuf,
    /// Request-shaped JSON whose value lists are the attribute domains;
    /// derived from policy literals when omitted.
    #[arg(long)]
    domains: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_BOUND)]
    bound: u128,
    /// Encode with every rule effect flipped.
    #[arg(long)]
    mutant: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    pap: PathBuf,
    /// Only this top-level tree.
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Denied,
    Counterexample,
    Usage(String),
    Parse(String),
    Engine(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Denied | Failure::Counterexample => 1,
            Failure::Usage(_) => 2,
            Failure::Parse(_) => 3,
            Failure::Engine(_) => 4,
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        Failure::Parse(e.to_string())
    }
}

impl From<PapError> for Failure {
    fn from(e: PapError) -> Self {
        match e {
            PapError::Format { .. } | PapError::Manifest(_) => Failure::Parse(e.to_string()),
            PapError::Io(_) => Failure::Usage(e.to_string()),
            _ => Failure::Engine(e.to_string()),
        }
    }
}

impl From<UpdateError> for Failure {
    fn from(e: UpdateError) -> Self {
        match e {
            UpdateError::Pap(p) => p.into(),
            e => Failure::Engine(e.to_string()),
        }
    }
}

impl From<SpaceError> for Failure {
    fn from(e: SpaceError) -> Self {
        match e {
            SpaceError::DomainTooLarge { .. } => Failure::Usage(e.to_string()),
            e => Failure::Engine(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Engine(format!("{}: {e}", path.display())))
}

fn load_pap(dir: &Path) -> Result<PapSnapshot, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("{} is not a directory", dir.display())));
    }
    Ok(PapSnapshot::load(dir)?)
}

fn evaluate(args: EvaluateArgs) -> Outcome {
    let pap = load_pap(&args.pap)?;
    let request = io::parse_request(&read(&args.request)?)?;
    let result = evaluate_pap(&request, pap.trees(), &EvalOptions::default())
        .map_err(|e| Failure::Engine(e.to_string()))?;
    let response = result.response();
    if args.trace {
        let mut doc: Value = serde_json::from_str(&serialize_response(&response)).expect("response JSON");
        let mut trace = EvalTrace::default();
        for tree in pap.trees().iter().take(result.trees_evaluated) {
            eval_node_traced(tree, &request, &mut trace).map_err(|e| Failure::Engine(e.to_string()))?;
        }
        doc["trace"] = trace.nodes.iter().map(|(id, d)| json!([id, d.name()])).collect();
        doc["counters"] = json!(Counters::new(1, 1, 1, 0, 0));
        doc["applied"] = json!(result.applied);
        doc["nonApplied"] = json!(result.non_applied);
        println!("{doc}");
    } else {
        println!("{}", serialize_response(&response));
    }
    if let Some(path) = &args.record {
        let mut file = SessionFile::open_or_default(path)?;
        let id = args.session.clone().unwrap_or_else(|| file.next_id());
        file.upsert(&id, &request, &response);
        file.save(path)?;
    }
    if args.strict && response.decision == Some(Decision::Deny) {
        return Err(Failure::Denied);
    }
    Ok(())
}

fn answers(path: Option<&Path>) -> Result<BTreeMap<String, Value>, Failure> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    serde_json::from_slice(&read(path)?)
        .map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

fn answer_value(t: ValueType, v: &Value) -> Option<AttributeValue> {
    match v {
        Value::String(s) => AttributeValue::parse(t, s),
        Value::Number(_) | Value::Bool(_) => AttributeValue::parse(t, &v.to_string()),
        _ => None,
    }
}

fn update(args: UpdateArgs) -> Outcome {
    let pap = load_pap(&args.pap)?;
    let mut file = SessionFile::load(&args.sessions)?;
    let events = parse_update_events(&String::from_utf8_lossy(&read(&args.events)?))
        .map_err(|(line, e)| Failure::Parse(format!("{}:{line}: {e}", args.events.display())))?;
    let table = answers(args.obligations.as_deref())?;
    let service = FnService(move |_: &str, obligations: &[Obligation], _| {
        let mut provided = BTreeMap::new();
        for o in obligations {
            match table.get(&o.attribute_id).and_then(|v| answer_value(o.data_type, v)) {
                Some(v) => provided.insert(o.attribute_id.clone(), v),
                None => return ObligationOutcome::TimedOut,
            };
        }
        ObligationOutcome::Provided(provided)
    });
    let config = EngineConfig {
        mode: if args.baseline { EngineMode::Baseline } else { EngineMode::Incremental },
        capacity: file.sessions.len().max(1),
        ..EngineConfig::default()
    };
    let mut engine = UpdateEngine::new(pap, service, config);
    for s in &file.sessions {
        let request = s.request()?;
        let response = engine.open_session(&s.id, request)?;
        if response != s.response()? {
            return Err(UpdateError::StaleSession(s.id.clone()).into());
        }
    }
    for event in &events {
        let report = engine.apply_event(event)?;
        println!("{}", report.audit_line());
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        for o in &report.outcomes {
            let mut line = json!({
                "session": o.session,
                "response": serde_json::from_str::<Value>(&serialize_response(&o.response)).expect("response JSON"),
            });
            if let Some(asked) = &o.attribute_request {
                line["attributeRequest"] =
                    serde_json::from_str(&serialize_response(asked)).expect("response JSON");
            }
            if args.trace {
                let record = engine.session(&o.session).expect("affected session is live");
                line["counters"] = json!(record.counters);
            }
            println!("{line}");
        }
    }
    if args.write {
        engine.snapshot().save(&args.pap)?;
        let journal = args.pap.join("journal.ndjson");
        let mut text = fs::read_to_string(&journal).unwrap_or_default();
        text.push_str(&engine.store().journal().to_ndjson());
        write(&journal, text)?;
        for s in engine.sessions() {
            file.upsert(&s.id, &s.request, &s.response());
        }
        file.save(&args.sessions)?;
    }
    Ok(())
}

fn profile(arg: &str) -> Result<DatasetProfile, Failure> {
    let path = Path::new(arg);
    if path.is_file() {
        return serde_json::from_slice(&read(path)?)
            .map_err(|e| Failure::Parse(format!("{arg}: {e}")));
    }
    DatasetProfile::by_name(arg).ok_or_else(|| {
        let names: Vec<String> = DatasetProfile::builtins().into_iter().map(|p| p.name).collect();
        Failure::Usage(format!("no profile file or built-in profile {arg:?} (built-ins: {})", names.join(", ")))
    })
}

fn run_bench(args: BenchArgs) -> Outcome {
    let profile = profile(&args.profile)?;
    let testbeds = if args.testbed == "all" {
        Testbed::ALL.to_vec()
    } else {
        vec![Testbed::from_name(&args.testbed).map_err(|e| Failure::Usage(e.to_string()))?]
    };
    let dataset = bench::generate(&profile, args.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = BenchConfig {
        sessions: args.sessions,
        ..BenchConfig::default()
    };
    let mut results = Vec::new();
    for t in testbeds {
        let (a, b) = bench::run_testbed(t, &dataset, args.updates, args.seed, &cfg)
            .map_err(|e| Failure::Engine(e.to_string()))?;
        results.push(a);
        results.push(b);
    }
    print!("{}", bench::report(&results));
    if let Some(path) = &args.gnuplot {
        write(path, bench::gnuplot_data(&results))?;
    }
    Ok(())
}

fn domains_from(request: &Request) -> Domains {
    let mut out = Domains::new();
    for category in AttributeCategory::ALL {
        for (id, values) in request.bag(category) {
            if let Some(first) = values.first() {
                out.insert(AttributeRef::new(category, id.clone(), first.value_type()), values.clone());
            }
        }
    }
    out
}

fn verify(args: VerifyArgs) -> Outcome {
    let pap = load_pap(&args.pap)?;
    let file_domains = match &args.domains {
        Some(path) => Some(domains_from(&io::parse_request(&read(path)?)?)),
        None => None,
    };
    let mut failed = false;
    for tree in pap.trees() {
        let domains = file_domains
            .clone()
            .unwrap_or_else(|| space::derive_domains([&**tree]));
        let mut encoder = Encoder::new(AtomTable::for_node(tree));
        if args.mutant {
            encoder = encoder.with_mutation(Mutation::FlipRuleEffects);
        }
        let encoding = Encoding::build(encoder, tree)?;
        let report = check_equivalence(&encoding, tree, &domains, args.bound)?;
        match report.mismatch {
            None => println!("{}: equivalent over {} requests", tree.id(), report.requests),
            Some(m) => {
                failed = true;
                let space = match m.space {
                    Ok(d) => d.name().to_string(),
                    Err(e) => e.to_string(),
                };
                println!(
                    "{}: counterexample after {} requests: direct {}, decision space {}",
                    tree.id(),
                    report.requests,
                    m.direct.name(),
                    space
                );
                println!("{}", io::serialize_request(&m.request));
            }
        }
    }
    if failed {
        Err(Failure::Counterexample)
    } else {
        Ok(())
    }
}

fn encode(args: EncodeArgs) -> Outcome {
    let pap = load_pap(&args.pap)?;
    let trees: Vec<_> = match &args.policy {
        Some(id) => vec![pap
            .tree(id)
            .ok_or_else(|| Failure::Usage(format!("no top-level tree {id}")))?],
        None => pap.trees().iter().collect(),
    };
    for tree in trees {
        println!("# {}", tree.id());
        print!("{}", Encoding::of_node(tree)?.dump());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Update(a) => update(a),
        Command::Bench(a) => run_bench(a),
        Command::Verify(a) => verify(a),
        Command::Encode(a) => encode(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Denied | Failure::Counterexample => {}
                Failure::Usage(m) | Failure::Parse(m) | Failure::Engine(m) => eprintln!("dypol: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
