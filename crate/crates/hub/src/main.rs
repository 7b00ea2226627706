use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use qdh_hub::client::{Client, ClientError};
use qdh_hub::config::{default_path, CliConfig, DEFAULT_ENDPOINT};
use qdh_hub::journal::CrashPoint;
use qdh_hub::service::{start, ServeOptions, DEV_IDP_SECRET};
use qdh_hub::HubConfig;
use serde_json::Value;

/// Materials-provenance hub: server and client.
#[derive(Parser)]
#[command(name = "qdh", version)]
struct Cli {
    /// Hub base URL. Overrides the saved config.
    #[arg(long, global = true, env = "QDH_ENDPOINT")]
    endpoint: Option<String>,
    /// Bearer token. Overrides the saved config.
    #[arg(long, global = true, env = "QDH_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Config file (default ~/.qdh/config, or $QDH_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hub server.
    Serve {
        #[arg(long, default_value = "qdh-data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Administrator user id; repeatable.
        #[arg(long = "admin", env = "QDH_ADMINS", value_delimiter = ',')]
        admins: Vec<String>,
        /// External identity provider base URL. Without it tokens are
        /// checked against the built-in mock provider.
        #[arg(long)]
        idp_url: Option<String>,
        #[arg(long, env = "QDH_IDP_SECRET", hide_env_values = true)]
        idp_secret: Option<String>,
        /// Do not mount the mock provider.
        #[arg(long)]
        no_mock_idp: bool,
        /// Seconds a verified token is cached; 0 disables caching.
        #[arg(long, default_value_t = 300)]
        token_ttl: u64,
        /// Total object bytes the hub accepts.
        #[arg(long)]
        quota_bytes: Option<u64>,
    },
    /// Obtain a token from the mock provider and save it.
    Login {
        #[arg(long)]
        user: String,
    },
    /// Show who the current token belongs to.
    Whoami,
    /// Upload a bundle: a .graphml, .json or .zip file, or a directory.
    Ingest {
        path: PathBuf,
        /// create, replace, or create_or_replace
        #[arg(long)]
        mode: Option<String>,
        /// json, graphml or zip; guessed when omitted
        #[arg(long)]
        format: Option<String>,
    },
    /// Run a federated query given inline or as a file path.
    Query {
        query: String,
        #[arg(long, value_enum, default_value = "json")]
        format: OutputFormat,
    },
    /// List visible samples.
    Samples,
    /// Show one sample.
    Sample {
        id: String,
        #[arg(long)]
        version: Option<usize>,
    },
    /// Download an object.
    GetObject {
        path: String,
        #[arg(long)]
        version: Option<u32>,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print the metadata record instead of the content.
        #[arg(long)]
        meta: bool,
    },
    /// Upload an object into a sample.
    PutObject {
        sample: String,
        /// Object path inside the hub.
        path: String,
        /// Local file to upload.
        file: PathBuf,
    },
    /// List items linked to an id.
    Navigate { id: String },
    /// Grant rights on an object.
    Grant {
        subject: String,
        object: String,
        /// Comma-separated: read, write, update.
        #[arg(long, value_delimiter = ',', default_value = "read")]
        rights: Vec<String>,
    },
    /// Group administration.
    Group {
        #[command(subcommand)]
        command: GroupCommand,
    },
    /// Register table extensions and characterization types.
    Onboard {
        #[command(subcommand)]
        command: OnboardCommand,
    },
    /// Insert a row given as JSON inline or in a file.
    InsertRow {
        table: String,
        row: String,
        #[arg(long)]
        sample: Option<String>,
    },
    /// Make a sample public or private.
    Public {
        sample: String,
        #[arg(action = clap::ArgAction::Set)]
        public: bool,
    },
    /// Hide an object (administrators only).
    Tombstone { object: String },
    /// Undo a tombstone (administrators only).
    Restore { object: String },
}

#[derive(Subcommand)]
enum GroupCommand {
    Create {
        group: String,
        #[arg(long)]
        owner: String,
    },
    AddMember {
        group: String,
        user: String,
        #[arg(long, default_value = "student")]
        role: String,
        #[arg(long)]
        representative: bool,
    },
}

#[derive(Subcommand)]
enum OnboardCommand {
    /// A table extension as a JSON file.
    Schema { file: PathBuf },
    /// One dictionary entry or a list, as a JSON file.
    Dict { file: PathBuf },
}

enum Failure {
    Client(ClientError),
    Usage(String),
    Other(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Client(e)) => {
            match &e {
                ClientError::Api { request_id: Some(id), .. } => eprintln!("error: {e} (request {id})"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Writes to stdout; a reader that went away (`| head`) ends the process
/// quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(1);
    }
}

fn print_json(v: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")));
}

fn read_text_arg(arg: &str) -> Result<String, Failure> {
    let p = Path::new(arg);
    if p.is_file() {
        std::fs::read_to_string(p).map_err(|e| Failure::Other(format!("{arg}: {e}")))
    } else {
        Ok(arg.to_string())
    }
}

fn read_json_file(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn print_table(v: &Value) {
    let columns: Vec<String> = v["columns"]
        .as_array()
        .map(|c| c.iter().map(|x| x.as_str().unwrap_or_default().to_string()).collect())
        .unwrap_or_default();
    let rows: Vec<Vec<String>> = v["rows"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .map(|r| {
                    r.as_array()
                        .map(|cells| cells.iter().map(|c| c.as_str().unwrap_or("").to_string()).collect())
                        .unwrap_or_default()
                })
                .collect()
        })
        .unwrap_or_default();
    let mut widths: Vec<usize> = columns.iter().map(|c| c.chars().count()).collect();
    for r in &rows {
        for (i, cell) in r.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut text = format!("{}\n", line(&columns));
    text.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    text.push('\n');
    for r in &rows {
        text.push_str(&line(r));
        text.push('\n');
    }
    text.push_str(&format!("({} rows)\n", rows.len()));
    emit(&text);
}

fn serve(opts: ServeOptions) -> Result<(), Failure> {
    let server = start(opts).map_err(|e| Failure::Other(e.to_string()))?;
    println!("qdh listening on {}", server.url());
    let _ = std::io::stdout().flush();
    server.wait().map_err(|e| Failure::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config_path = cli.config.clone().unwrap_or_else(default_path);
    let saved = CliConfig::load(&config_path).map_err(|e| Failure::Usage(e.to_string()))?;
    let endpoint = cli
        .endpoint
        .clone()
        .or_else(|| saved.endpoint.clone())
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
    let token = cli.token.clone().or_else(|| saved.token.clone());
    let client = Client::new(&endpoint, token);

    match cli.command {
        Command::Serve {
            data_dir,
            addr,
            admins,
            idp_url,
            idp_secret,
            no_mock_idp,
            token_ttl,
            quota_bytes,
        } => {
            let crash = match std::env::var("QDH_CRASH_AT") {
                Ok(spec) => Some(CrashPoint::parse(&spec, true).ok_or_else(|| Failure::Usage(format!("QDH_CRASH_AT: cannot parse {spec:?}")))?),
                Err(_) => None,
            };
            let hub = HubConfig {
                data_dir,
                admins: admins.into_iter().filter(|a| !a.is_empty()).collect(),
                quota_bytes,
                crash,
            };
            let mut opts = ServeOptions::new(hub);
            opts.addr = addr;
            opts.idp_url = idp_url;
            opts.idp_secret = if no_mock_idp {
                None
            } else {
                Some(idp_secret.unwrap_or_else(|| DEV_IDP_SECRET.to_string()))
            };
            opts.token_ttl = Duration::from_secs(token_ttl);
            opts.handle_signals = true;
            serve(opts)
        }
        Command::Login { user } => {
            let token = client.login(&user)?;
            let cfg = CliConfig {
                endpoint: Some(endpoint),
                token: Some(token),
                user: Some(user.clone()),
            };
            cfg.save(&config_path).map_err(|e| Failure::Other(e.to_string()))?;
            println!("logged in as {user}; token saved to {}", config_path.display());
            Ok(())
        }
        Command::Whoami => {
            print_json(&client.whoami()?);
            Ok(())
        }
        Command::Ingest { path, mode, format } => {
            if !path.exists() {
                return Err(Failure::Usage(format!("{}: no such file or directory", path.display())));
            }
            print_json(&client.ingest_path(&path, mode.as_deref(), format.as_deref())?);
            Ok(())
        }
        Command::Query { query, format } => {
            let text = read_text_arg(&query)?;
            let result = client.query(&text)?;
            match format {
                OutputFormat::Json => print_json(&result),
                OutputFormat::Table => print_table(&result),
            }
            Ok(())
        }
        Command::Samples => {
            print_json(&Value::Array(client.list_samples()?));
            Ok(())
        }
        Command::Sample { id, version } => {
            print_json(&client.get_sample(&id, version)?);
            Ok(())
        }
        Command::GetObject {
            path,
            version,
            output,
            meta,
        } => {
            if meta {
                print_json(&client.object_meta(&path, version)?);
                return Ok(());
            }
            let (bytes, _) = client.get_object(&path, version)?;
            match output {
                Some(out) => std::fs::write(&out, bytes).map_err(|e| Failure::Other(format!("{}: {e}", out.display()))),
                None => std::io::stdout().write_all(&bytes).map_err(|e| Failure::Other(e.to_string())),
            }
        }
        Command::PutObject { sample, path, file } => {
            let content = std::fs::read(&file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
            print_json(&client.put_object(&sample, &path, content)?);
            Ok(())
        }
        Command::Navigate { id } => {
            print_json(&Value::Array(client.navigate(&id)?));
            Ok(())
        }
        Command::Grant { subject, object, rights } => {
            let rights: Vec<&str> = rights.iter().map(String::as_str).collect();
            print_json(&client.grant(&subject, &object, &rights)?);
            Ok(())
        }
        Command::Group { command } => {
            let v = match command {
                GroupCommand::Create { group, owner } => client.create_group(&group, &owner)?,
                GroupCommand::AddMember {
                    group,
                    user,
                    role,
                    representative,
                } => client.add_member(&group, &user, &role, representative.then_some(true))?,
            };
            print_json(&v);
            Ok(())
        }
        Command::Onboard { command } => {
            let v = match command {
                OnboardCommand::Schema { file } => client.onboard_schema(&read_json_file(&file)?)?,
                OnboardCommand::Dict { file } => client.onboard_dictionary(&read_json_file(&file)?)?,
            };
            print_json(&v);
            Ok(())
        }
        Command::InsertRow { table, row, sample } => {
            let text = read_text_arg(&row)?;
            let row: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("row: {e}")))?;
            print_json(&client.insert_row(&table, &row, sample.as_deref())?);
            Ok(())
        }
        Command::Public { sample, public } => {
            print_json(&client.set_public(&sample, public)?);
            Ok(())
        }
        Command::Tombstone { object } => {
            print_json(&client.tombstone(&object)?);
            Ok(())
        }
        Command::Restore { object } => {
            print_json(&client.restore(&object)?);
            Ok(())
        }
    }
}
