//! Command-line front end.
//!
//! Exit codes: 0 document written, 1 I/O failure, 2 invalid input or
//! configuration, 3 a step failed (the session file is saved and can be
//! resumed), 4 the user quit at an intervention prompt.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::gateway::{
    record_transcript, ApiKey, Gateway, GatewayConfig, LiveGateway, ScriptedGateway, DEFAULT_MODEL,
};
use crate::prompts::{AgentRole, PromptLibrary, PromptSet, PromptVersionId, RequestLimits};
use crate::service::{self, AppState, ServiceConfig};
use crate::session::{
    load_session, save_session, GenerationSession, SessionError, SessionOptions, StepEvent,
    DEFAULT_INTERVENTION_CAP,
};
use crate::template::parse_template_auto;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_STEP_FAILED: i32 = 3;
pub const EXIT_QUIT: i32 = 4;

const SKIP_COMMAND: &str = "/skip";
const QUIT_COMMAND: &str = "/quit";

#[derive(Debug, Parser)]
#[command(
    name = "semdoc",
    version,
    about = "Fill document templates section by section with LLM agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a document from a template.
    Generate(GenerateArgs),
    /// Continue a saved session.
    Resume(ResumeArgs),
    /// Print a saved session's state.
    Inspect {
        #[arg(long)]
        session: PathBuf,
    },
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Args)]
pub struct GatewayArgs {
    #[arg(long, value_enum, default_value = "live")]
    pub mode: ModeArg,
    /// Fixture file for scripted mode.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 2)]
    pub retry_limit: u32,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InteractionArgs {
    /// Where `<stem>.json` and `<stem>.txt` are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Session file; defaults to `<stem>.session.json`.
    #[arg(long)]
    pub session: Option<PathBuf>,
    /// Newline-separated intervention answers used in order.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Never read stdin; interventions without a scripted answer are declined.
    #[arg(long)]
    pub auto: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long, conflicts_with = "prompt_file")]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub io: InteractionArgs,
    /// Directory with `<role>.<version>.txt` overrides of the builtin prompts.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    #[arg(long)]
    pub semantics_version: Option<PromptVersionId>,
    #[arg(long)]
    pub retrieval_version: Option<PromptVersionId>,
    #[arg(long)]
    pub generation_version: Option<PromptVersionId>,
    #[arg(long, default_value_t = DEFAULT_INTERVENTION_CAP)]
    pub intervention_cap: u32,
}

#[derive(Debug, Clone, Args)]
pub struct ResumeArgs {
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[command(flatten)]
    pub io: InteractionArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    /// Environment variable holding the bearer token clients must send.
    #[arg(long)]
    pub token_env: Option<String>,
}

/// Parses arguments and runs; used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    let stdin = std::io::stdin();
    run(
        cli,
        &mut stdin.lock(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    )
}

pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Generate(args) => generate(args, input, out),
        Command::Resume(args) => resume(args, input, out),
        Command::Inspect { session } => inspect(&session, out),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(code) => code,
        Err(CliError { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn invalid(message: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| CliError::io(path, e))
}

/// The gateway and the request limits that go with it.
fn build_gateway(args: &GatewayArgs) -> Result<(Arc<dyn Gateway>, RequestLimits), CliError> {
    match args.mode {
        ModeArg::Scripted => {
            let path = args
                .fixtures
                .as_deref()
                .ok_or_else(|| CliError::invalid("--mode scripted needs --fixtures"))?;
            let gw = ScriptedGateway::from_file(path).map_err(CliError::invalid)?;
            Ok((Arc::new(gw), RequestLimits::default()))
        }
        ModeArg::Live => {
            let config = GatewayConfig {
                endpoint_url: args.endpoint.clone(),
                model_name: args.model.clone(),
                retry_limit: args.retry_limit,
                timeout: std::time::Duration::from_secs(args.timeout_secs),
                api_key: std::env::var(&args.api_key_env).ok().map(ApiKey::new),
                ..GatewayConfig::default()
            };
            let limits = config.limits();
            let gw = LiveGateway::new(config).map_err(CliError::invalid)?;
            Ok((Arc::new(gw), limits))
        }
    }
}

fn prompt_set(args: &GenerateArgs) -> Result<PromptSet, CliError> {
    let lib = match &args.prompts_dir {
        Some(dir) => PromptLibrary::load_dir(dir).map_err(CliError::invalid)?,
        None => PromptLibrary::builtin(),
    };
    let pick = |role, v: Option<PromptVersionId>| v.unwrap_or(lib.default_for(role).version);
    lib.select(
        pick(AgentRole::SemanticsIdentification, args.semantics_version),
        pick(AgentRole::InformationRetrieval, args.retrieval_version),
        pick(AgentRole::ContentGeneration, args.generation_version),
    )
    .map_err(CliError::invalid)
}

fn generate(
    args: GenerateArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let template = parse_template_auto(&read_file(&args.template)?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", args.template.display())))?;
    let initial_prompt = match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => String::from_utf8(read_file(path)?)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?,
        (None, None) => String::new(),
    };
    let prompts = prompt_set(&args)?;
    let (gateway, limits) = build_gateway(&args.gateway)?;
    let session = GenerationSession::start(
        template,
        &initial_prompt,
        SessionOptions {
            session_id: None,
            prompts,
            limits,
            intervention_cap: args.intervention_cap,
        },
    );
    drive(session, &*gateway, &args.io, input, out)
}

fn resume(args: ResumeArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32, CliError> {
    let path = args
        .io
        .session
        .clone()
        .unwrap_or_else(|| session_path_for(&args.io.out));
    let session = load_session(&read_file(&path)?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let (gateway, _) = build_gateway(&args.gateway)?;
    drive(session, &*gateway, &args.io, input, out)
}

fn inspect(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let session = load_session(&read_file(path)?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let w = |out: &mut dyn Write, line: String| {
        writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
    };
    w(out, format!("session {}", session.session_id()))?;
    w(
        out,
        format!(
            "prompts: semantics={} retrieval={} generation={}",
            session.prompts().semantics.version,
            session.prompts().retrieval.version,
            session.prompts().generation.version
        ),
    )?;
    for (i, s) in session.sections().iter().enumerate() {
        let marker = if i == session.cursor() { ">" } else { " " };
        let mut line = format!("{marker} {} {}", s.section_id, s.status.as_str());
        if let Some(missing) = &s.missing {
            line.push_str(&format!(" (missing: {missing})"));
        }
        w(out, line)?;
    }
    w(
        out,
        format!(
            "accumulated prompt ({} entries):",
            session.accumulated().len()
        ),
    )?;
    w(out, session.render_accumulated())?;
    w(out, format!("completed: {}", session.is_completed()))?;
    Ok(EXIT_OK)
}

fn serve(args: ServeArgs) -> Result<i32, CliError> {
    // The live client owns its own runtime, so it is built and dropped
    // outside the server's runtime.
    let (gateway, limits) = build_gateway(&args.gateway)?;
    let token = match &args.token_env {
        Some(var) => {
            Some(std::env::var(var).map_err(|_| CliError::invalid(format!("{var} is not set")))?)
        }
        None => None,
    };
    let config = ServiceConfig {
        limits,
        token,
        default_mode: gateway.mode(),
        ..ServiceConfig::default()
    };
    let state = Arc::new(
        AppState::open(&args.data_dir, config)
            .map_err(|e| CliError::io(&args.data_dir, e))?
            .with_gateway(gateway),
    );
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(Path::new("<runtime>"), e))?;
    let served = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind).await?;
        tracing::info!(addr = %args.bind, "listening");
        service::serve(listener, state.clone()).await
    });
    drop(runtime);
    drop(state);
    served.map_err(|e| CliError::io(Path::new("<server>"), e))?;
    Ok(EXIT_OK)
}

/// `out` without its extension.
fn stem_of(out: &Path) -> PathBuf {
    out.with_extension("")
}

fn session_path_for(out: &Path) -> PathBuf {
    let mut p = stem_of(out).into_os_string();
    p.push(".session.json");
    PathBuf::from(p)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

enum Answer {
    Text(String),
    Skip,
    Quit,
}

struct AnswerSource {
    scripted: Option<std::vec::IntoIter<String>>,
    interactive: bool,
}

impl AnswerSource {
    fn new(io: &InteractionArgs) -> Result<Self, CliError> {
        let scripted = match &io.answers {
            Some(path) => {
                let text = String::from_utf8(read_file(path)?)
                    .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
                Some(
                    text.lines()
                        .map(str::to_string)
                        .collect::<Vec<_>>()
                        .into_iter(),
                )
            }
            None => None,
        };
        Ok(AnswerSource {
            interactive: !io.auto && scripted.is_none(),
            scripted,
        })
    }

    fn next(&mut self, input: &mut dyn BufRead) -> Answer {
        let line = if let Some(lines) = &mut self.scripted {
            lines.next().unwrap_or_default()
        } else if self.interactive {
            let mut line = String::new();
            match input.read_line(&mut line) {
                Ok(_) => line.trim_end_matches(['\r', '\n']).to_string(),
                Err(_) => String::new(),
            }
        } else {
            String::new()
        };
        match line.trim() {
            SKIP_COMMAND => Answer::Skip,
            QUIT_COMMAND => Answer::Quit,
            _ => Answer::Text(line),
        }
    }
}

fn drive(
    mut session: GenerationSession,
    gateway: &dyn Gateway,
    io: &InteractionArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let stem = stem_of(&io.out);
    let session_path = io
        .session
        .clone()
        .unwrap_or_else(|| session_path_for(&io.out));
    let transcript_path = with_suffix(&stem, ".transcript.ndjson");
    let save = |s: &GenerationSession| -> Result<(), CliError> {
        write_file(&session_path, &save_session(s))?;
        write_file(
            &transcript_path,
            &record_transcript(s.session_id(), s.transcript()),
        )
    };
    let say = |out: &mut dyn Write, line: &str| -> Result<(), CliError> {
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))
    };
    let mut answers = AnswerSource::new(io)?;

    say(out, &format!("session {}", session.session_id()))?;
    loop {
        // a resumed session may be waiting for an answer already
        if let Some((section_id, missing)) = session.pending_intervention() {
            let section_id = section_id.to_string();
            say(
                out,
                &format!("[{section_id}] missing information: {missing}"),
            )?;
            say(out, "answer (empty to decline, /skip, /quit):")?;
            match answers.next(input) {
                Answer::Quit => {
                    save(&session)?;
                    say(out, &format!("saved {}", session_path.display()))?;
                    return Ok(EXIT_QUIT);
                }
                Answer::Skip => {
                    session.skip_section().map_err(CliError::invalid)?;
                    say(out, &format!("[{section_id}] skipped"))?;
                }
                Answer::Text(text) => session
                    .provide_intervention(&text)
                    .map_err(CliError::invalid)?,
            }
            save(&session)?;
            continue;
        }
        if session.is_completed() {
            break;
        }
        match session.step(gateway) {
            Ok(StepEvent::SectionGenerated { section_id, text }) => {
                say(out, &format!("[{section_id}] {text}"))?;
            }
            Ok(StepEvent::SectionCarried { section_id }) => {
                say(out, &format!("[{section_id}] carried over"))?;
            }
            Ok(StepEvent::InterventionRequired { .. }) => {}
            Ok(StepEvent::Completed) => {}
            Err(SessionError::SessionDone) => break,
            Err(e) => {
                save(&session)?;
                return Err(CliError {
                    code: EXIT_STEP_FAILED,
                    message: format!("{e}; session saved to {}", session_path.display()),
                });
            }
        }
        save(&session)?;
    }

    let doc = session.assemble_document().map_err(CliError::invalid)?;
    let json_path = with_suffix(&stem, ".json");
    let text_path = with_suffix(&stem, ".txt");
    write_file(&json_path, doc.to_json().as_bytes())?;
    write_file(&text_path, doc.to_plain_text().as_bytes())?;
    say(
        out,
        &format!("wrote {} and {}", json_path.display(), text_path.display()),
    )?;
    Ok(EXIT_OK)
}
