use std::fs;
use std::path::Path;

use steerprompt_core::backends::surrogate::SurrogateWorld;
use steerprompt_core::runner::embfile::EmbeddingTable;
use steerprompt_core::runner::registry::BackendRegistry;
use steerprompt_core::runner::runlog::RunLog;
use steerprompt_core::runner::settings::Settings;
use steerprompt_core::runner::{self, Session};

const CLASSES: [&str; 3] = ["cat", "truck", "tree"];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Image rows are surrogate embeddings of "<word> <class>" with a label that
/// is sometimes deliberately wrong, so accuracy is strictly between 0 and 1.
fn write_fixture(dir: &Path) -> Vec<(Vec<f64>, usize)> {
    let world = SurrogateWorld::default();
    let words = ["green", "fast", "tall", "tiny"];
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    for (c, class) in CLASSES.iter().enumerate() {
        for (w, word) in words.iter().enumerate() {
            let v = unit(
                world
                    .mean_embedding(&format!("{word} {class}"))
                    .unwrap()
                    .to_vec(),
            );
            let label = if w == 3 { (c + 1) % CLASSES.len() } else { c };
            examples.push(serde_json::json!({"embedding": rows.len(), "label": label}));
            rows.push((v, label));
        }
    }
    let table: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    EmbeddingTable::from_rows(&table)
        .unwrap()
        .save(&dir.join("x.glovemb"))
        .unwrap();
    fs::write(dir.join("classes.txt"), CLASSES.join("\n")).unwrap();
    fs::write(
        dir.join("data.json"),
        serde_json::json!({"class_names": "classes.txt", "embeddings": "x.glovemb", "examples": examples})
            .to_string(),
    )
    .unwrap();
    fs::write(
        dir.join("run.toml"),
        "[task]\nmanifest = \"data.json\"\nseed_prompts = [\"a photo of a {}\", \"a {} outside\"]\n\n\
         [optimizer]\nmax_iterations = 4\ncandidates_per_iter = 5\nmax_new_tokens = 5\n\n\
         [backend]\nname = \"surrogate\"\ntemperature = 0.8\n",
    )
    .unwrap();
    // stored rows round-trip through f32
    rows.into_iter()
        .map(|(v, l)| (v.iter().map(|&x| x as f32 as f64).collect(), l))
        .collect()
}

/// Prototype per class from the mean token embedding of each filled prompt,
/// then nearest prototype by cosine.
fn oracle_accuracy(prompts: &[&str], images: &[(Vec<f64>, usize)]) -> f64 {
    let world = SurrogateWorld::default();
    let protos: Vec<Vec<f64>> = CLASSES
        .iter()
        .map(|class| {
            let mut acc = vec![0.0; world.dim()];
            for p in prompts {
                let e = unit(
                    world
                        .mean_embedding(&p.replace("{}", class))
                        .unwrap()
                        .to_vec(),
                );
                acc.iter_mut()
                    .zip(&e)
                    .for_each(|(a, b)| *a += b / prompts.len() as f64);
            }
            unit(acc)
        })
        .collect();
    let correct = images
        .iter()
        .filter(|(img, label)| {
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let norm = dot(img, img).sqrt();
            let cos: Vec<f64> = protos.iter().map(|p| dot(p, img) / norm).collect();
            let best = (0..cos.len()).fold(0, |b, i| if cos[i] > cos[b] { i } else { b });
            best == *label
        })
        .count();
    correct as f64 / images.len() as f64
}

#[test]
fn evaluate_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let images = write_fixture(dir.path());
    let settings = Settings::load(&dir.path().join("run.toml")).unwrap();
    let session = Session::open(settings, &BackendRegistry::default()).unwrap();
    for prompts in [
        vec!["a photo of a {}"],
        vec!["a {} outside", "a photo of a {}", "{}"],
    ] {
        let owned: Vec<String> = prompts.iter().map(|p| p.to_string()).collect();
        let report = runner::evaluate(&session, &owned).unwrap();
        assert_eq!(report.total, 12);
        assert_eq!(
            report.top1,
            oracle_accuracy(&prompts, &images),
            "{prompts:?}"
        );
        let per_class: usize = report.per_class.iter().map(|c| c.total).sum();
        assert_eq!(per_class, 12);
    }
}

#[test]
fn optimize_writes_log_and_prompts() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let settings = Settings::load(&dir.path().join("run.toml")).unwrap();
    let session = Session::open(settings, &BackendRegistry::default()).unwrap();
    let log_path = dir.path().join("out/run.jsonl");
    let outcome = runner::optimize(&session, &log_path).unwrap();

    let log = RunLog::load(&log_path).unwrap();
    assert_eq!(log.records.len(), 4);
    assert_eq!(log.header.initial, outcome.initial);
    assert_eq!(log.records, outcome.records);
    let so_far: Vec<f64> = log.all_records().map(|r| r.best_so_far).collect();
    assert!(so_far.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*so_far.last().unwrap(), outcome.best_fitness());

    let prompts = runner::read_prompts(&runner::sibling(&log_path, "prompts.txt")).unwrap();
    let ensemble: Vec<String> = outcome.ensemble.iter().map(|c| c.text.clone()).collect();
    assert_eq!(prompts, ensemble);
    assert!(!prompts.is_empty() && prompts.len() <= 3);

    // a log cut mid-line still loads, minus the partial record
    let text = fs::read_to_string(&log_path).unwrap();
    let cut = dir.path().join("cut.jsonl");
    fs::write(&cut, &text[..text.len() - 20]).unwrap();
    assert_eq!(RunLog::load(&cut).unwrap().records.len(), 3);
}
