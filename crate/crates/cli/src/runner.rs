//! Batch execution: scenarios run concurrently, each pipeline sequentially.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;

use crate::canonical;
use crate::commands::{run, Command, Options};
use crate::scenario::load_scenario;

pub const THREADS_ENV: &str = "RBSDE_LAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass = 0,
    CheckFailed = 1,
    InputError = 2,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

#[derive(Clone, Debug)]
pub struct ItemResult {
    pub path: PathBuf,
    pub status: Status,
    /// Canonical report, if the command ran.
    pub report: Option<String>,
    /// One-line failure JSON for stderr.
    pub failure: Option<String>,
    /// Files written under the output directory.
    pub written: Vec<PathBuf>,
}

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn run_one(command: Command, path: &Path, options: &Options, out: Option<&Path>, csv: bool) -> ItemResult {
    let mut result = ItemResult {
        path: path.to_path_buf(),
        status: Status::Pass,
        report: None,
        failure: None,
        written: Vec::new(),
    };
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            result.status = Status::InputError;
            result.failure = Some(
                json!({
                    "status": "input_error",
                    "scenario": path.display().to_string(),
                    "kind": e.kind(),
                    "pointer": e.pointer(),
                    "message": e.to_string(),
                })
                .to_string(),
            );
            return result;
        }
    };
    let outcome = match run(command, &scenario, options) {
        Ok(o) => o,
        Err(e) => {
            result.status = if e.is_input() {
                Status::InputError
            } else {
                Status::CheckFailed
            };
            result.failure = Some(
                json!({
                    "status": if e.is_input() { "input_error" } else { "solver_error" },
                    "scenario": scenario.name,
                    "command": command.name(),
                    "message": e.to_string(),
                })
                .to_string(),
            );
            return result;
        }
    };
    if !outcome.pass() {
        result.status = Status::CheckFailed;
        result.failure = Some(
            json!({
                "status": "check_failed",
                "scenario": scenario.name,
                "command": command.name(),
                "failures": outcome.failures,
            })
            .to_string(),
        );
    }
    let text = canonical::to_string(&outcome.report);
    if let Some(dir) = out {
        let stem = format!("{}.{}", scenario.name, command.name());
        let mut files = vec![(dir.join(format!("{stem}.json")), text.clone())];
        if csv {
            for (suffix, contents) in &outcome.csv {
                files.push((dir.join(format!("{stem}.{suffix}")), contents.clone()));
            }
        }
        for (file, contents) in files {
            if let Err(e) = write_atomic(&file, &contents) {
                result.status = Status::InputError;
                result.failure = Some(
                    json!({
                        "status": "io_error",
                        "scenario": scenario.name,
                        "message": format!("cannot write {}: {e}", file.display()),
                    })
                    .to_string(),
                );
                return result;
            }
            result.written.push(file);
        }
    }
    result.report = Some(text);
    result
}

/// Runs every scenario, at most [`thread_count`] at a time. Results come back
/// in input order.
pub fn run_batch(
    command: Command,
    paths: &[PathBuf],
    options: &Options,
    out: Option<&Path>,
    csv: bool,
) -> Vec<ItemResult> {
    let threads = thread_count().min(paths.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ItemResult>>> = Mutex::new(vec![None; paths.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= paths.len() {
                    break;
                }
                let r = run_one(command, &paths[i], options, out, csv);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

pub fn exit_code(results: &[ItemResult]) -> i32 {
    results
        .iter()
        .map(|r| r.status)
        .max()
        .unwrap_or(Status::Pass)
        .exit_code()
}
