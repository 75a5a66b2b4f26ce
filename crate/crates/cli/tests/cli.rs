use std::path::Path;
use std::process::{Command, Output};

fn nb(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nb")).arg("--root").arg(root).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn listings() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = nb(dir.path(), &["list-tasks"]);
    assert!(tasks.status.success());
    let text = stdout(&tasks);
    for id in ["n170_synthetic", "retrieval_synthetic"] {
        assert!(text.contains(id), "{text}");
    }
    let models = stdout(&nb(dir.path(), &["list-models"]));
    for id in ["dummy", "chance", "linear_pooled"] {
        assert!(models.lines().any(|l| l.starts_with(id)), "{models}");
    }
}

#[test]
fn run_rerun_report_compact() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--models", "dummy,chance", "--tasks", "n170_synthetic", "--seeds", "2", "--workers", "2"];
    let first = nb(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("4 experiments planned"));
    assert!(stdout(&first).contains("4 ok, 0 failed"));

    let again = nb(dir.path(), &args);
    assert!(again.status.success());
    assert!(stdout(&again).contains("0 experiments planned"));

    let forced = nb(dir.path(), &[&args[..], &["--force"]].concat());
    assert!(stdout(&forced).contains("4 experiments planned"));

    let rep = nb(dir.path(), &["report"]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let out = dir.path().join("reports").join("core");
    for f in ["rank_table.csv", "scores.csv", "kendall.csv", "plot_data.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let compact = nb(dir.path(), &["compact"]);
    assert!(compact.status.success());
    assert!(stdout(&compact).contains("dropped 4"), "{}", stdout(&compact));
}

#[test]
fn failing_runner_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = nb(
        dir.path(),
        &["run", "--models", "bad", "--runner", "bad=/nonexistent/runner", "--tasks", "n170_synthetic", "--seeds", "1"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nb(dir.path(), &["run", "--models", "nope", "--tasks", "n170_synthetic"]).status.code(), Some(2));
    assert_eq!(nb(dir.path(), &["run", "--tasks", "no_such_task"]).status.code(), Some(2));
    assert_eq!(nb(dir.path(), &["run", "--tasks", "n170_synthetic", "--set", "nonsense"]).status.code(), Some(2));
    let meg = nb(dir.path(), &["meg", "n170_synthetic"]);
    assert_eq!(meg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&meg.stderr).contains("eeg"));
}

#[test]
fn modality_prepare_and_download() {
    let dir = tempfile::tempdir().unwrap();
    let prep = nb(dir.path(), &["eeg", "n170_synthetic", "--prepare"]);
    assert!(prep.status.success(), "{}", String::from_utf8_lossy(&prep.stderr));
    assert!(stdout(&prep).contains("examples"));
    assert!(dir.path().join("cache").is_dir());
    let dl = nb(dir.path(), &["eeg", "n170_synthetic", "--download"]);
    assert!(dl.status.success());
    assert!(stdout(&dl).contains("synthetic"));
}

#[test]
fn modality_runs_a_single_task() {
    let dir = tempfile::tempdir().unwrap();
    let o = nb(dir.path(), &["eeg", "n170_synthetic", "--models", "dummy", "--seeds", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("1 experiments planned"));
}
