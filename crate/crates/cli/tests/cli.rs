use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn ifim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifim"))
        .args(args)
        .env_remove("IFIM_API_BASE")
        .env_remove("IFIM_API_KEY")
        .output()
        .expect("run ifim")
}

fn ok(args: &[&str]) -> String {
    let out = ifim(args);
    assert!(
        out.status.success(),
        "ifim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_jsonl(path: &Path, values: &[Value]) {
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, text).unwrap();
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &TempDir) -> PathBuf {
    let samples: Vec<Value> = (0..10)
        .map(|i| {
            json!({
                "id": format!("s{i}"),
                "language": "Python",
                "code": format!("def f{i}(x):\n    y = x + {i}\n    z = y * 2\n    return z\n"),
            })
        })
        .collect();
    let path = p(dir, "corpus.jsonl");
    write_jsonl(&path, &samples);
    path
}

#[test]
fn synth_is_reproducible_and_decontaminates() {
    let dir = TempDir::new().unwrap();
    let corpus = corpus(&dir);
    let (a, b) = (p(&dir, "a.jsonl"), p(&dir, "b.jsonl"));
    let stdout = ok(&["--seed", "3", "synth", "--corpus", s(&corpus), "--out", s(&a)]);
    assert!(stdout.contains("ingested=10 removed=0"), "{stdout}");
    let records = read_jsonl(&a);
    assert_eq!(records.len(), 10);
    for r in &records {
        let joined = format!(
            "{}{}{}",
            r["prefix"].as_str().unwrap(),
            r["middle"].as_str().unwrap(),
            r["suffix"].as_str().unwrap()
        );
        assert!(joined.starts_with("def f"));
        assert_eq!(r["language"], "python");
        assert!(r["instruction"].as_str().unwrap().starts_with("Implement the missing"));
    }
    ok(&["--seed", "3", "synth", "--corpus", s(&corpus), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let bench = p(&dir, "bench.jsonl");
    write_jsonl(
        &bench,
        &[json!({"code": "def f4(x):\n    y = x + 4\n"})],
    );
    let stdout = ok(&[
        "synth", "--corpus", s(&corpus), "--out", s(&b), "--contaminants", s(&bench),
    ]);
    assert!(stdout.contains("removed=1"), "{stdout}");
    assert_eq!(read_jsonl(&b).len(), 9);
}

#[test]
fn format_ratios_and_modes() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "data.jsonl");
    ok(&["synth", "--corpus", s(&corpus(&dir)), "--out", s(&data)]);

    let out = p(&dir, "plain.jsonl");
    ok(&["format", "--dataset", s(&data), "--mode", "PSIM", "--ratio", "0", "--out", s(&out)]);
    let examples = read_jsonl(&out);
    assert_eq!(examples.len(), 10);
    assert!(examples.iter().all(|e| e["tag"] == "plain_fim" && e["mode"] == "PSM"));
    assert!(!fs::read_to_string(&out).unwrap().contains("<INS>"));

    ok(&["format", "--dataset", s(&data), "--mode", "pims", "--ratio", "1", "--out", s(&out)]);
    let examples = read_jsonl(&out);
    assert!(examples.iter().all(|e| e["tag"] == "ifim" && e["mode"] == "PIMS"));
    assert!(examples[0]["input"].as_str().unwrap().contains("<INS>"));
    assert!(examples[0]["input_after"].as_str().unwrap().ends_with("<SUF>"));

    let stdout = ok(&[
        "--seed", "1", "format", "--dataset", s(&data), "--mode", "PSM", "--ratio", "0.5", "--cfim",
        "--out", s(&out),
    ]);
    assert!(stdout.contains("cfim=5 plain_fim=5"), "{stdout}");

    let bad = ifim(&["format", "--dataset", s(&data), "--mode", "PQRS", "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("PQRS"));
}

fn humaneval_problems(n: usize) -> Vec<Value> {
    let body: String = (0..10).map(|k| format!("    v{k} = x + {k}\n")).collect();
    (0..n)
        .map(|i| {
            json!({
                "task_id": format!("HumanEval/{i}"),
                "prompt": "def f(x):\n    \"\"\"Docstring to strip.\"\"\"\n",
                "canonical_solution": body,
                "test": "def check(candidate):\n    candidate(1)\n",
                "entry_point": "f",
            })
        })
        .collect()
}

#[test]
fn bench_subsets_humaneval_to_312() {
    let dir = TempDir::new().unwrap();
    let problems = p(&dir, "he.jsonl");
    write_jsonl(&problems, &humaneval_problems(164));
    let out = p(&dir, "tasks.jsonl");
    let stdout = ok(&["bench", "--problems", s(&problems), "--origin", "humaneval", "--out", s(&out)]);
    assert!(stdout.contains("derived=1640 subset=312 with_instruction=0"), "{stdout}");
    let tasks = read_jsonl(&out);
    assert_eq!(tasks.len(), 312);
    assert!(tasks.iter().all(|t| t.get("instruction").is_none()));
    assert!(!tasks[0]["prefix"].as_str().unwrap().contains("Docstring"));
}

#[test]
fn bench_truncates_rme_and_attaches_instructions() {
    let dir = TempDir::new().unwrap();
    let long: String = (0..40).map(|i| format!("a{i} = {i}\n")).collect();
    let task = json!({
        "task_id": "r/0", "origin": "custom", "prefix": long, "suffix": long,
        "canonical_middle": "b = 1\n", "tests": "",
    });
    let input = p(&dir, "rme.jsonl");
    write_jsonl(&input, &[task]);
    let out = p(&dir, "out.jsonl");
    ok(&[
        "bench", "--problems", s(&input), "--origin", "rme", "--out", s(&out), "--backend", "mock",
    ]);
    let tasks = read_jsonl(&out);
    assert_eq!(tasks[0]["origin"], "repomastereval");
    assert_eq!(tasks[0]["prefix"].as_str().unwrap().lines().count(), 20);
    assert!(tasks[0]["prefix"].as_str().unwrap().starts_with("a20 = 20\n"));
    assert_eq!(tasks[0]["suffix"].as_str().unwrap().lines().count(), 20);
    assert!(tasks[0]["instruction"].is_string());
}

fn eval_tasks(dir: &TempDir, with_instruction: bool) -> PathBuf {
    let tasks: Vec<Value> = (0..4)
        .map(|i| {
            let mut t = json!({
                "task_id": format!("t{i}"), "origin": "custom",
                "prefix": "def f(x):\n", "canonical_middle": format!("    y = x + {i}\n"),
                "suffix": "    return y\n", "tests": format!("assert f(1) == {}\n", 1 + i),
            });
            if with_instruction {
                t["instruction"] = json!(format!("Add {i} to x"));
            }
            t
        })
        .collect();
    let path = p(dir, "bench.jsonl");
    write_jsonl(&path, &tasks);
    path
}

#[test]
fn eval_oracle_both_settings() {
    let dir = TempDir::new().unwrap();
    let bench = eval_tasks(&dir, true);
    let out = p(&dir, "run");
    let stdout = ok(&[
        "--jobs", "2", "eval", "--benchmark", s(&bench), "--backend", "oracle", "--both", "--out", s(&out),
    ]);
    assert!(stdout.contains("bench w/ ins."), "{stdout}");
    assert_eq!(stdout.matches("100.0").count(), 2, "{stdout}");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv, "Model,bench w/ ins.,bench w/o ins.\noracle,100.0,100.0\n");
    assert_eq!(read_jsonl(&out.join("results.with_instruction.jsonl")).len(), 4);
}

#[test]
fn eval_scripted_three_of_four() {
    let dir = TempDir::new().unwrap();
    let bench = eval_tasks(&dir, false);
    let script = p(&dir, "script.json");
    fs::write(&script, r#"{"t2": "    y = x - 100\n"}"#).unwrap();
    let out = p(&dir, "run");
    let stdout = ok(&[
        "eval", "--benchmark", s(&bench), "--backend", "scripted", "--script", s(&script), "--out",
        s(&out), "--label", "mock",
    ]);
    assert!(stdout.contains("75.0"), "{stdout}");
    let results = read_jsonl(&out.join("results.without_instruction.jsonl"));
    let passed: Vec<bool> = results.iter().map(|r| r["passed"].as_bool().unwrap()).collect();
    assert_eq!(passed, [true, true, false, true]);
    assert_eq!(results[2]["failure_kind"], "test_fail");
}

#[test]
fn eval_missing_instruction_is_per_task() {
    let dir = TempDir::new().unwrap();
    let bench = eval_tasks(&dir, false);
    let out = p(&dir, "run");
    let run = ifim(&[
        "eval", "--benchmark", s(&bench), "--with-instruction", "--out", s(&out),
    ]);
    assert!(run.status.success());
    let results = read_jsonl(&out.join("results.with_instruction.jsonl"));
    assert!(results.iter().all(|r| r["failure_kind"] == "input_error"));
    assert!(String::from_utf8_lossy(&run.stdout).contains("0.0"));
}

#[test]
fn assemble_prints_ifim_input() {
    let dir = TempDir::new().unwrap();
    let file = p(&dir, "a.py");
    fs::write(&file, "def positives(xs):\n    #!filter out negative numbers\n").unwrap();
    let stdout = ok(&["assemble", "--file", s(&file)]);
    assert_eq!(stdout, "<PRE>def positives(xs):\n<SUF><INS>filter out negative numbers<MID>");

    let stdout = ok(&["assemble", "--file", s(&file), "--profile", "default-spm", "--json"]);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["instruction"], "filter out negative numbers");
    assert_eq!(v["input"], "<SUF><PRE>def positives(xs):\n<INS>filter out negative numbers<MID>");

    let bad = ifim(&["assemble", "--file", s(&file), "--profile", "missing"]);
    assert!(!bad.status.success());
}

#[test]
fn config_file_and_custom_profiles() {
    let dir = TempDir::new().unwrap();
    fs::write(
        p(&dir, "profiles.toml"),
        "[[profile]]\nname = \"fimtok\"\nbase_mode = \"PSM\"\n[profile.sentinels]\npre = \"<|fim_prefix|>\"\nsuf = \"<|fim_suffix|>\"\nmid = \"<|fim_middle|>\"\nins = \"<|fim_ins|>\"\n",
    )
    .unwrap();
    let config = p(&dir, "ifim.toml");
    fs::write(&config, "seed = 5\nprofiles = \"profiles.toml\"\n").unwrap();
    let file = p(&dir, "a.py");
    fs::write(&file, "x = 1\n").unwrap();
    let stdout = ok(&["--config", s(&config), "assemble", "--file", s(&file), "--profile", "fimtok"]);
    assert_eq!(stdout, "<|fim_prefix|>x = 1\n<|fim_suffix|><|fim_middle|>");

    fs::write(&config, "sede = 5\n").unwrap();
    assert!(!ifim(&["--config", s(&config), "assemble", "--file", s(&file)]).status.success());
}

#[test]
fn serve_rejects_bad_bind() {
    let out = ifim(&["serve", "--bind", "not-an-address"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bind"));
}
