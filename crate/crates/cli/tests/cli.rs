use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use steerprompt_core::backends::surrogate::SurrogateWorld;
use steerprompt_core::runner::embfile::EmbeddingTable;

const CLASSES: [&str; 4] = ["dog", "bird", "car", "flower"];
const STYLES: [&str; 3] = ["small", "bright", "old"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_steerprompt"));
    c.env_remove("STEERPROMPT_LOG_DIR").env("RUST_LOG", "error");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

/// Four classes, three images each. Image vectors are surrogate text
/// embeddings of "<style> <class>" so the surrogate scorer can separate
/// them.
fn write_task(dir: &Path, mode: &str) {
    let world = SurrogateWorld::default();
    fs::write(dir.join("classes.txt"), CLASSES.join("\n") + "\n").unwrap();
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    let mut descriptions = serde_json::Map::new();
    for (label, class) in CLASSES.iter().enumerate() {
        for style in STYLES {
            let text = format!("{style} {class}");
            let v = world.mean_embedding(&text).unwrap();
            let n = v.dot(&v).sqrt();
            let row = rows.len();
            rows.push(v.iter().map(|x| x / n).collect::<Vec<f64>>());
            examples.push(serde_json::json!({"embedding": row, "label": label}));
            descriptions.insert(format!("images.glovemb#{row}"), text.into());
        }
    }
    EmbeddingTable::from_rows(&rows)
        .unwrap()
        .save(&dir.join("images.glovemb"))
        .unwrap();
    let manifest = serde_json::json!({
        "class_names": "classes.txt",
        "embeddings": "images.glovemb",
        "examples": examples,
    });
    fs::write(dir.join("train.json"), manifest.to_string()).unwrap();
    fs::write(
        dir.join("descriptions.json"),
        serde_json::Value::Object(descriptions).to_string(),
    )
    .unwrap();
    let config = format!(
        "[task]\nmanifest = \"train.json\"\nname = \"toy objects\"\nmode = \"{mode}\"\n\
         seed_prompts = [\"a photo of a {{}}\", \"a small {{}}\"]\n\n\
         [optimizer]\nmax_iterations = 3\ncandidates_per_iter = 4\nmax_new_tokens = 6\nseed = 1\n\n\
         [backend]\nname = \"surrogate\"\ntemperature = 0.7\ndescriptions = \"descriptions.json\"\n\n\
         [output]\nlog_dir = \"logs\"\n"
    );
    fs::write(dir.join("run.toml"), config).unwrap();
}

fn count_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn surrogate_demo_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("demo.jsonl");
    let svg = dir.path().join("demo.svg");
    let out = run(bin()
        .args(["surrogate-demo", "--seed", "4", "--log"])
        .arg(&log)
        .arg("--image")
        .arg(&svg));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("best fitness"));
    assert_eq!(count_lines(&log), 31);
    let csv_path = dir.path().join("demo.csv");
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 32);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(count_lines(&dir.path().join("demo.prompts.txt")) == 3);

    fs::remove_file(&csv_path).unwrap();
    assert!(run(bin().arg("plot").arg(&log)).status.success());
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), csv);
}

#[test]
fn log_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["surrogate-demo", "--seed", "2"])
        .env("STEERPROMPT_LOG_DIR", dir.path())
        .current_dir(dir.path()));
    assert!(out.status.success());
    assert!(dir.path().join("surrogate-demo-seed2.jsonl").exists());
}

#[test]
fn optimize_then_evaluate_dual_encoder() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "dual_encoder");
    let out = run(bin().arg("optimize").arg(dir.path().join("run.toml")));
    assert!(out.status.success());
    let log = dir.path().join("logs/toy-objects-seed1.jsonl");
    assert_eq!(count_lines(&log), 4);
    let prompts = dir.path().join("logs/toy-objects-seed1.prompts.txt");
    let ensemble = fs::read_to_string(&prompts).unwrap();
    assert!(ensemble.lines().all(|l| l.contains("{}")), "{ensemble}");

    let out = run(bin()
        .arg("evaluate")
        .arg(dir.path().join("run.toml"))
        .arg("--prompts")
        .arg(&prompts)
        .arg("--manifest")
        .arg(dir.path().join("train.json"))
        .arg("--json"));
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["total"], 12);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 4);
    let top1 = report["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
}

#[test]
fn open_ended_optimize_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "encoder_decoder");
    let config = dir.path().join("run.toml");
    assert!(run(bin()
        .arg("optimize")
        .arg(&config)
        .args(["--seed", "5", "--alpha", "2"]))
    .status
    .success());
    assert!(dir.path().join("logs/toy-objects-seed5.jsonl").exists());

    let out = run(bin()
        .arg("alpha-sweep")
        .arg(&config)
        .args(["--grid", "0,1"]));
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("alpha 0:") && text.contains("chosen alpha"),
        "{text}"
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path(), "dual_encoder");
    let config = dir.path().join("run.toml");

    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(1));

    let text = fs::read_to_string(&config).unwrap();
    fs::write(&config, text.replace("seed = 1", "seed = 1\nsed = 2")).unwrap();
    let out = run(bin().arg("optimize").arg(&config));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sed"));

    fs::write(
        &config,
        text.replace("name = \"surrogate\"", "name = \"nonexistent\""),
    )
    .unwrap();
    assert_eq!(
        run(bin().arg("optimize").arg(&config)).status.code(),
        Some(2)
    );

    fs::write(&config, text).unwrap();
    assert_eq!(
        run(bin().arg("alpha-sweep").arg(&config).args(["--grid", ""]))
            .status
            .code(),
        Some(1)
    );

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(run(bin().arg("plot").arg(&missing)).status.code(), Some(3));
}
