//! Replays the transcripts in `tests/golden/` against the echo runner.
//!
//! `>` lines are sent verbatim after placeholder substitution; `<` lines are the
//! expected replies, where the string `"*"` matches any value.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::Value;

use nbench::bench::{prepare_dataset, resolve_tasks, PreparedData, Workspace};
use nbench::domain::SplitLabel;
use nbench::protocol::DataManifest;

const ECHO: &str = env!("CARGO_BIN_EXE_nb-echo-runner");

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

struct Script {
    args: Vec<String>,
    task: String,
    steps: Vec<(bool, String)>,
}

fn parse(text: &str) -> Script {
    let mut script = Script { args: vec![], task: String::new(), steps: vec![] };
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# args:") {
            script.args = rest.split_whitespace().map(str::to_string).collect();
        } else if let Some(rest) = line.strip_prefix("# task:") {
            script.task = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("> ") {
            script.steps.push((true, rest.to_string()));
        } else if let Some(rest) = line.strip_prefix("< ") {
            script.steps.push((false, rest.to_string()));
        }
    }
    script
}

fn substitute(v: &mut Value, subs: &[(&str, Value)]) {
    match v {
        Value::String(s) => {
            if let Some((_, r)) = subs.iter().find(|(k, _)| k == s) {
                *v = r.clone();
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|x| substitute(x, subs)),
        Value::Object(map) => map.values_mut().for_each(|x| substitute(x, subs)),
        _ => {}
    }
}

fn matches(expected: &Value, actual: &Value, path: &str) -> Result<(), String> {
    match (expected, actual) {
        (Value::String(s), _) if s == "*" => Ok(()),
        (Value::Object(e), Value::Object(a)) => {
            let ek: Vec<&String> = e.keys().collect();
            let ak: Vec<&String> = a.keys().collect();
            if ek != ak {
                return Err(format!("{path}: keys {ek:?} != {ak:?}"));
            }
            e.iter().try_for_each(|(k, ev)| matches(ev, &a[k], &format!("{path}.{k}")))
        }
        (Value::Array(e), Value::Array(a)) if e.len() == a.len() => {
            e.iter().zip(a).enumerate().try_for_each(|(i, (x, y))| matches(x, y, &format!("{path}[{i}]")))
        }
        _ if expected == actual => Ok(()),
        _ => Err(format!("{path}: expected {expected}, got {actual}")),
    }
}

fn manifest(data: &PreparedData) -> DataManifest {
    DataManifest {
        cache_path: data.cache_path.clone(),
        split_manifest_path: data.manifest_path.clone(),
        split_hash: data.manifest.split_hash,
        counts: data.examples.split_counts(),
    }
}

fn replay(file: &Path) -> Result<usize, String> {
    let script = parse(&std::fs::read_to_string(file).map_err(|e| e.to_string())?);
    let task = resolve_tasks(&[script.task.clone()]).map_err(|e| e.to_string())?.remove(0);
    let ws = Workspace::new(PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("golden"));
    let data = prepare_dataset(&ws, &task, task.sources().next().unwrap()).map_err(|e| e.to_string())?;
    let mut missing = manifest(&data);
    missing.cache_path = ws.root.join("absent.nbc");
    let ids: Vec<Value> = data.manifest.ids_of(SplitLabel::Test).into_iter().map(Value::from).collect();
    let subs = [
        ("$TASK", serde_json::to_value(&task).unwrap()),
        ("$DATA", serde_json::to_value(manifest(&data)).unwrap()),
        ("$MISSING_DATA", serde_json::to_value(&missing).unwrap()),
        ("$TEST_IDS", Value::Array(ids)),
    ];

    let mut child = Command::new(ECHO)
        .args(&script.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    for (i, (send, line)) in script.steps.iter().enumerate() {
        let step = format!("{} step {}", file.display(), i + 1);
        if *send {
            let out = match serde_json::from_str::<Value>(line) {
                Ok(mut v) => {
                    substitute(&mut v, &subs);
                    v.to_string()
                }
                Err(_) => line.clone(),
            };
            writeln!(stdin, "{out}").map_err(|e| format!("{step}: {e}"))?;
            stdin.flush().map_err(|e| format!("{step}: {e}"))?;
        } else {
            let mut got = String::new();
            stdout.read_line(&mut got).map_err(|e| format!("{step}: {e}"))?;
            let actual: Value = serde_json::from_str(got.trim()).map_err(|e| format!("{step}: {e}: {got:?}"))?;
            let mut expected: Value = serde_json::from_str(line).map_err(|e| format!("{step}: golden line: {e}"))?;
            substitute(&mut expected, &subs);
            matches(&expected, &actual, "$").map_err(|e| format!("{step}: {e}"))?;
        }
    }
    drop(stdin);
    let status = child.wait().map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("{}: runner exited with {status}", file.display()));
    }
    Ok(script.steps.len())
}

#[test]
fn echo_runner_conforms_to_every_golden_transcript() {
    let mut files: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    files.sort();
    assert!(files.len() >= 4, "{files:?}");
    for f in &files {
        replay(f).unwrap_or_else(|e| panic!("{e}"));
    }
}

#[test]
fn matcher_is_strict_outside_wildcards() {
    let e: Value = serde_json::json!({"a": "*", "b": [1, 2]});
    assert!(matches(&e, &serde_json::json!({"a": {"x": 1}, "b": [1, 2]}), "$").is_ok());
    assert!(matches(&e, &serde_json::json!({"a": 0, "b": [1, 3]}), "$").is_err());
    assert!(matches(&e, &serde_json::json!({"a": 0, "b": [1, 2], "c": 0}), "$").is_err());
}
