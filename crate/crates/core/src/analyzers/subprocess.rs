use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::diagnostics::AnalyzerKind;

use super::{AnalyzerConfig, AnalyzerError};

pub(crate) struct Captured {
    pub status: ExitStatus,
    pub stdout: String,
    pub stderr: String,
}

fn drain<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `cmd` to completion, killing it once `timeout` elapses.
pub(crate) fn run_with_timeout(
    tool: AnalyzerKind,
    mut cmd: Command,
    timeout: Duration,
) -> Result<Captured, AnalyzerError> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| AnalyzerError::ToolNotFound {
            tool,
            detail: e.to_string(),
        })?;
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(AnalyzerError::Timeout {
                tool,
                seconds: timeout.as_secs_f64(),
            });
        }
        thread::sleep(Duration::from_millis(5));
    };
    Ok(Captured {
        status,
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
    })
}

fn search_path(program: &str) -> Option<PathBuf> {
    let paths = std::env::var_os("PATH")?;
    std::env::split_paths(&paths)
        .map(|dir| dir.join(program))
        .find(|candidate| is_executable(candidate))
}

fn is_executable(path: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        path.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    }
    #[cfg(not(unix))]
    {
        path.is_file()
    }
}

pub const CPPCHECK_ENV: &str = "CODEXITY_CPPCHECK";
pub const INFER_ENV: &str = "CODEXITY_INFER";

/// Locates an external analyzer: explicit config path, then the override
/// environment variable, then `PATH`.
pub fn resolve_tool(tool: AnalyzerKind, cfg: &AnalyzerConfig) -> Result<PathBuf, AnalyzerError> {
    let (configured, env, program) = match tool {
        AnalyzerKind::CppCheck => (cfg.cppcheck_path.as_ref(), CPPCHECK_ENV, "cppcheck"),
        AnalyzerKind::Infer => (cfg.infer_path.as_ref(), INFER_ENV, "infer"),
        AnalyzerKind::Builtin => {
            return Err(AnalyzerError::ToolNotFound {
                tool,
                detail: "the builtin analyzer has no executable".into(),
            })
        }
    };
    let explicit = configured
        .cloned()
        .or_else(|| std::env::var_os(env).filter(|v| !v.is_empty()).map(PathBuf::from));
    match explicit {
        Some(path) if path.components().count() > 1 => {
            if is_executable(&path) {
                Ok(path)
            } else {
                Err(AnalyzerError::ToolNotFound {
                    tool,
                    detail: format!("{} is not an executable file", path.display()),
                })
            }
        }
        Some(name) => search_path(&name.to_string_lossy()).ok_or_else(|| AnalyzerError::ToolNotFound {
            tool,
            detail: format!("`{}` not found on PATH", name.display()),
        }),
        None => search_path(program).ok_or_else(|| AnalyzerError::ToolNotFound {
            tool,
            detail: format!("`{program}` not found on PATH (set {env} to override)"),
        }),
    }
}

pub(crate) fn excerpt(text: &str, limit: usize) -> String {
    let trimmed = text.trim();
    if trimmed.chars().count() <= limit {
        return trimmed.to_string();
    }
    let tail: String = trimmed
        .chars()
        .rev()
        .take(limit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    format!("...{tail}")
}
