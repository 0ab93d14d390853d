//! The `converge` command line and the `/api/v1` HTTP service.

pub mod api;
pub mod cli;
pub mod envelope;
pub mod ops;

use clap::error::ErrorKind;
use clap::Parser;
use converge_core::{Error, ErrorClass};

use crate::cli::{Action, Cli, Format};
use crate::envelope::ApiEnvelope;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    /// The command ran but a check failed or a gate was rejected.
    pub const CHECK_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INVALID: i32 = 3;
    pub const CONFLICT: i32 = 4;
    pub const NOT_FOUND: i32 = 5;
    pub const INTEGRITY: i32 = 6;
    pub const OPERATIONAL: i32 = 7;
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Invalid => exit::INVALID,
        ErrorClass::Conflict => exit::CONFLICT,
        ErrorClass::NotFound => exit::NOT_FOUND,
        ErrorClass::Integrity => exit::INTEGRITY,
        ErrorClass::Operational => exit::OPERATIONAL,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Parse `argv` (program name first), run the command and render its
/// output. `serve` blocks until the server stops.
pub fn run<I, T>(argv: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            let text = e.render().to_string();
            return if code == exit::OK {
                Output { code, stdout: text, stderr: String::new() }
            } else {
                Output { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let (format, quiet, root) = (cli.format, cli.quiet, cli.root.clone());
    let fail = |e: Error| render_error(format, &e);
    match cli.command.into_action() {
        Err(e) => fail(e),
        Ok(Action::Serve { bind, token }) => match api::serve_blocking(&root, bind, token) {
            Ok(()) => Output { code: exit::OK, stdout: String::new(), stderr: String::new() },
            Err(e) => render_failure(format, &e.code, &e.message, e.exit),
        },
        Ok(Action::Op(op)) => match ops::execute(&root, op) {
            Err(e) => fail(e),
            Ok(reply) => {
                let code = if reply.passed { exit::OK } else { exit::CHECK_FAILED };
                let stdout = match format {
                    Format::Structured => pretty(&ApiEnvelope::ok(reply.data)),
                    Format::Human if quiet => String::new(),
                    Format::Human => format!("{}\n", reply.text),
                };
                Output { code, stdout, stderr: String::new() }
            }
        },
    }
}

fn pretty(env: &ApiEnvelope) -> String {
    let mut s = serde_json::to_string_pretty(env).expect("envelope serializes");
    s.push('\n');
    s
}

fn render_error(format: Format, e: &Error) -> Output {
    match format {
        Format::Structured => Output {
            code: exit_code(e.class()),
            stdout: pretty(&ApiEnvelope::from_error(e)),
            stderr: String::new(),
        },
        Format::Human => render_failure(format, e.code(), &e.to_string(), exit_code(e.class())),
    }
}

fn render_failure(format: Format, code: &str, message: &str, status: i32) -> Output {
    match format {
        Format::Structured => Output {
            code: status,
            stdout: pretty(&ApiEnvelope::err(code, message, serde_json::Value::Null)),
            stderr: String::new(),
        },
        Format::Human => Output {
            code: status,
            stdout: String::new(),
            stderr: format!("error[{code}]: {message}\n"),
        },
    }
}
