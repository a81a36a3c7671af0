use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use receipt_ner::corpus::{Corpus, NECategory, ReceiptRecord, Split, Truth};
use receipt_ner::scoring::{Prediction, ScoreReport};
use receipt_ner::Answer;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_receipt-ner"));
    cmd.env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sample_corpus(split: Split) -> Corpus {
    let mk = |id: &str, shop: &str, total: &str| {
        ReceiptRecord::new(
            id,
            format!("{shop}\n東京都港区麻布十番2丁目2-4\n電話:03-5439-6226\n2021年 3月15日(月)\nOOLONG TEA ¥150\n合計 {total}"),
            Truth::new()
                .with(NECategory::ShopName, &[shop])
                .with(NECategory::Address, &["東京都港区麻布十番2丁目2-4"])
                .with(NECategory::Item1, &["OOLONG TEA"])
                .with(NECategory::Telephone, &["03-5439-6226"])
                .with(NECategory::Date, &["2021年 3月15日"])
                .with(NECategory::Total, &[total]),
        )
    };
    Corpus::new(
        split,
        vec![
            mk("a01", "FamilyMart", "¥1,015"),
            mk("a02", "LAWSON", "¥270"),
            ReceiptRecord::new("a03", "レシート\nありがとうございました", Truth::new()),
        ],
    )
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: TempDir::new().unwrap(),
        };
        fs::write(
            f.path("corpus.jsonl"),
            sample_corpus(Split::Test).to_jsonl(),
        )
        .unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }
}

#[test]
fn estimate_identical_files_gives_empty_matrix() {
    let f = Fixture::new();
    let corpus = f.path("corpus.jsonl");
    let out = f.path("m.tsv");
    let stdout = ok(&[
        "estimate",
        "--truth",
        p(&corpus),
        "--ocr",
        p(&corpus),
        "--out",
        p(&out),
    ]);
    assert!(stdout.starts_with("0 confusion pairs"));
    assert_eq!(
        f.read("m.tsv"),
        "source_char\treplacement_char\tprobability\n"
    );
}

#[test]
fn estimate_finds_the_two_substitutions() {
    let f = Fixture::new();
    fs::write(
        f.path("truth.jsonl"),
        "{\"id\":\"1\",\"text\":\"OOLONG ¥150\"}\n{\"id\":\"2\",\"text\":\"合計 ¥270\"}\n",
    )
    .unwrap();
    fs::write(
        f.path("ocr.jsonl"),
        "{\"id\":\"2\",\"text\":\"合計 Y270\"}\n{\"id\":\"1\",\"text\":\"0OLONG Y150\"}\n",
    )
    .unwrap();
    let stdout = ok(&[
        "estimate",
        "--truth",
        p(&f.path("truth.jsonl")),
        "--ocr",
        p(&f.path("ocr.jsonl")),
        "--out",
        p(&f.path("m.tsv")),
        "--counts",
        p(&f.path("counts.json")),
    ]);
    assert!(stdout.starts_with("2 confusion pairs"), "{stdout}");
    let tsv = f.read("m.tsv");
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows, ["O\t0\t0.3333333333333333", "¥\tY\t1"]);
    assert!(f.read("counts.json").contains("\"source_occurrences\""));
}

#[test]
fn estimate_rejects_id_mismatch() {
    let f = Fixture::new();
    fs::write(f.path("t.jsonl"), "{\"id\":\"1\",\"text\":\"a\"}\n").unwrap();
    fs::write(f.path("o.jsonl"), "{\"id\":\"2\",\"text\":\"a\"}\n").unwrap();
    let err = fails(&[
        "estimate",
        "--truth",
        p(&f.path("t.jsonl")),
        "--ocr",
        p(&f.path("o.jsonl")),
    ]);
    assert!(err.contains("`1`"), "{err}");
}

#[test]
fn corrupt_is_deterministic_and_counts_samples() {
    let f = Fixture::new();
    fs::write(
        f.path("train.jsonl"),
        sample_corpus(Split::Train).to_jsonl(),
    )
    .unwrap();
    fs::write(
        f.path("m.tsv"),
        "source_char\treplacement_char\tprobability\nO\t0\t0.5\n¥\tY\t0.5\n",
    )
    .unwrap();
    let args = |out: &str, seed: &str| {
        vec![
            "corrupt".to_string(),
            "--corpus".into(),
            f.path("train.jsonl").to_str().unwrap().into(),
            "--matrix".into(),
            f.path("m.tsv").to_str().unwrap().into(),
            "--variant".into(),
            "ocr10".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            f.path(out).to_str().unwrap().into(),
        ]
    };
    let a: Vec<String> = args("a.jsonl", "3");
    let stdout = ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.starts_with("30 samples"), "{stdout}");
    ok(&args("b.jsonl", "3")
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>());
    ok(&args("c.jsonl", "4")
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>());
    assert_eq!(f.read("a.jsonl"), f.read("b.jsonl"));
    assert_ne!(f.read("a.jsonl"), f.read("c.jsonl"));
    assert_eq!(f.read("a.jsonl").lines().count(), 30);
}

#[test]
fn corrupt_truth_variant_copies_text() {
    let f = Fixture::new();
    fs::write(
        f.path("train.jsonl"),
        sample_corpus(Split::Train).to_jsonl(),
    )
    .unwrap();
    ok(&[
        "corrupt",
        "--corpus",
        p(&f.path("train.jsonl")),
        "--variant",
        "truth",
        "--as-corpus",
        "--out",
        p(&f.path("v.jsonl")),
    ]);
    assert_eq!(f.read("v.jsonl"), f.read("train.jsonl"));
}

#[test]
fn config_seed_is_overridden_by_flag() {
    let f = Fixture::new();
    fs::write(
        f.path("train.jsonl"),
        sample_corpus(Split::Train).to_jsonl(),
    )
    .unwrap();
    fs::write(f.path("m.tsv"), "O\t0\t0.5\n").unwrap();
    fs::write(f.path("cfg.toml"), "seed = 11\n").unwrap();
    let (train, matrix) = (f.path("train.jsonl"), f.path("m.tsv"));
    let go = |extra: &[&str], out: &str| {
        let mut args = vec![
            "corrupt",
            "--corpus",
            p(&train),
            "--matrix",
            p(&matrix),
            "--variant",
            "ocr10",
        ];
        args.extend_from_slice(extra);
        let out = f.path(out);
        args.extend(["--out", p(&out)]);
        ok(&args);
        f.read(out.file_name().unwrap().to_str().unwrap())
    };
    let from_file = go(&["--config", p(&f.path("cfg.toml"))], "1.jsonl");
    let from_flag = go(&["--seed", "11"], "2.jsonl");
    let overridden = go(
        &["--config", p(&f.path("cfg.toml")), "--seed", "12"],
        "3.jsonl",
    );
    let flag_12 = go(&["--seed", "12"], "4.jsonl");
    assert_eq!(from_file, from_flag);
    assert_eq!(overridden, flag_12);
    assert_ne!(from_file, overridden);
}

#[test]
fn prompts_from_corpus() {
    let f = Fixture::new();
    let out = ok(&[
        "prompts",
        "--kind",
        "training",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--split",
        "test",
    ]);
    let lines: Vec<serde_json::Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 18);
    let first = lines[0]["text"].as_str().unwrap();
    assert!(first.starts_with(" ### Question: FamilyMart\n"));
    assert!(first.ends_with("の店名\n ### は: FamilyMartです。"));
    let empty_total = lines[17]["text"].as_str().unwrap();
    assert!(empty_total.ends_with("の合計\n ### は: Noneです。"));

    let inf = ok(&[
        "prompts",
        "--kind",
        "inference",
        "--corpus",
        p(&f.path("corpus.jsonl")),
    ]);
    assert!(inf.lines().all(|l| l.contains("\\n ### は:\"")));
}

#[test]
fn tag_encode_decode_round_trip() {
    let f = Fixture::new();
    let cfg = f.path("c.toml");
    fs::write(&cfg, "[chunking]\nmax_len = 16\n").unwrap();
    ok(&[
        "tag",
        "encode",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--split",
        "test",
        "--config",
        p(&cfg),
        "--out",
        p(&f.path("tags.jsonl")),
    ]);
    let tagged = f.read("tags.jsonl");
    assert!(tagged.lines().count() > 3);
    assert!(tagged.contains("\"chunk\":1"));
    assert!(tagged.contains("I-店名"));
    ok(&[
        "tag",
        "decode",
        "--input",
        p(&f.path("tags.jsonl")),
        "--out",
        p(&f.path("back.jsonl")),
    ]);
    let back =
        Corpus::from_reader(fs::File::open(f.path("back.jsonl")).unwrap(), Split::Test).unwrap();
    assert_eq!(back.records, sample_corpus(Split::Test).records);
}

#[test]
fn tag_rule_and_predict() {
    let f = Fixture::new();
    let rule = ok(&["tag", "rule", "--input", p(&f.path("corpus.jsonl"))]);
    assert!(rule.contains("I-電話番号"));
    let preds = ok(&["tag", "predict", "--corpus", p(&f.path("corpus.jsonl"))]);
    let preds: Vec<Prediction> = preds
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(preds.len(), 18);
    assert_eq!(preds[3].answer, Answer::Value("03-5439-6226".into()));
}

#[test]
fn extract_then_score_perfect_mock() {
    let f = Fixture::new();
    let preds = f.path("run/preds.jsonl");
    let stdout = ok(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--backend",
        "mock",
        "--variant",
        "ocr1",
        "--iterations",
        "5500",
        "--seed",
        "1",
        "--out",
        p(&preds),
    ]);
    assert!(
        stdout.starts_with("18 prediction rows, 0 failed"),
        "{stdout}"
    );
    let first_run = f.read("run/preds.jsonl");
    let manifest: serde_json::Value =
        serde_json::from_str(&f.read("run/preds.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest["variant"], "ocr1");
    assert_eq!(manifest["base_seed"], 1);
    assert_eq!(manifest["iterations"], 5500);

    // Rerun: identical predictions and config id.
    ok(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--backend",
        "mock",
        "--variant",
        "ocr1",
        "--iterations",
        "5500",
        "--seed",
        "1",
        "--out",
        p(&preds),
    ]);
    assert_eq!(f.read("run/preds.jsonl"), first_run);
    let again: serde_json::Value =
        serde_json::from_str(&f.read("run/preds.jsonl.manifest.json")).unwrap();
    assert_eq!(again["config_id"], manifest["config_id"]);

    let stdout = ok(&[
        "score",
        "--predictions",
        p(&preds),
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--out",
        p(&f.path("report")),
    ]);
    assert_eq!(stdout, "F_final 100.0\n");
    let csv = f.read("report.csv");
    assert!(
        csv.lines()
            .skip(1)
            .take(6)
            .all(|l| l.ends_with(",100.0,100.0,100.0")),
        "{csv}"
    );
    let report: ScoreReport = serde_json::from_str(&f.read("report.json")).unwrap();
    assert_eq!(
        report.meta.config_id,
        manifest["config_id"].as_str().unwrap()
    );
    assert_eq!(report.meta.iterations, Some(5500));
    assert!(report.meta.manifest_digest.is_some());
    assert!(f
        .read("report.md")
        .contains("| **F_final** | | | **100.0** |"));
}

#[test]
fn extract_none_mock_and_unreachable_server() {
    let f = Fixture::new();
    ok(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--mock",
        "none",
        "--out",
        p(&f.path("none.jsonl")),
    ]);
    let csv = ok(&[
        "score",
        "--predictions",
        p(&f.path("none.jsonl")),
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--format",
        "csv",
    ]);
    // Two receipts have every entity, one has none: TP=1, FN=2 everywhere.
    assert!(csv.contains("\n店名,100.0,33.3,71.4\n"), "{csv}");

    let stdout = ok(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--backend",
        "http",
        "--endpoint",
        "http://127.0.0.1:9/complete",
        "--retries",
        "0",
        "--timeout-secs",
        "2",
        "--out",
        p(&f.path("dead.jsonl")),
    ]);
    assert!(
        stdout.starts_with("18 prediction rows, 18 failed"),
        "{stdout}"
    );
    assert_eq!(f.read("dead.jsonl").lines().count(), 18);
}

#[test]
fn score_names_missing_pair() {
    let f = Fixture::new();
    ok(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--out",
        p(&f.path("preds.jsonl")),
    ]);
    let text = f.read("preds.jsonl");
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !(l.contains("\"a02\"") && l.contains("\"住所\"")))
        .collect();
    fs::write(f.path("preds.jsonl"), kept.join("\n")).unwrap();
    let err = fails(&[
        "score",
        "--predictions",
        p(&f.path("preds.jsonl")),
        "--corpus",
        p(&f.path("corpus.jsonl")),
    ]);
    assert!(err.contains("a02/住所"), "{err}");
}

/// 868 receipts whose judgement counts give the reference bert row.
#[test]
fn score_reproduces_reference_bert_row() {
    const COUNTS: [(usize, usize, usize); 6] = [
        (445, 412, 11),
        (645, 223, 0),
        (657, 167, 44),
        (788, 69, 11),
        (857, 11, 0),
        (845, 23, 0),
    ];
    const FORMS: [&str; 6] = [
        "Shop",
        "東京都港区",
        "パン",
        "03-1111-2222",
        "2021年3月15日",
        "¥1,015",
    ];
    const WRONG: [&str; 6] = [
        "Shoq",
        "大阪府",
        "ごはん",
        "06-9999-0000",
        "2020年1月1日",
        "¥9",
    ];
    let f = Fixture::new();
    let mut records = Vec::new();
    let mut preds = Vec::new();
    for i in 0..868 {
        let id = format!("t{i:03}");
        let mut truth = Truth::new();
        for (c, cat) in NECategory::ALL.into_iter().enumerate() {
            truth.set(cat, vec![FORMS[c].to_string()]);
            let (tp, fp, _) = COUNTS[c];
            let answer = if i < tp {
                Answer::Value(FORMS[c].into())
            } else if i < tp + fp {
                Answer::Value(WRONG[c].into())
            } else {
                Answer::None
            };
            preds.push(Prediction {
                receipt_id: id.clone(),
                category: cat,
                answer,
                terminated: true,
                raw: String::new(),
                error: None,
            });
        }
        records.push(ReceiptRecord::new(id, "receipt", truth));
    }
    fs::write(
        f.path("big.jsonl"),
        Corpus::new(Split::Test, records).to_jsonl(),
    )
    .unwrap();
    fs::write(
        f.path("p.jsonl"),
        receipt_ner::scoring::predictions_to_jsonl(&preds),
    )
    .unwrap();
    let csv = ok(&[
        "score",
        "--predictions",
        p(&f.path("p.jsonl")),
        "--corpus",
        p(&f.path("big.jsonl")),
        "--format",
        "csv",
    ]);
    let f_col: Vec<&str> = csv
        .lines()
        .skip(1)
        .take(6)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(f_col, ["57.3", "78.3", "82.2", "93.2", "99.0", "97.9"]);
    let pr: Vec<(&str, &str)> = csv
        .lines()
        .skip(1)
        .take(6)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[1], cols[2])
        })
        .collect();
    assert_eq!(
        pr,
        [
            ("51.9", "97.6"),
            ("74.3", "100.0"),
            ("79.7", "93.7"),
            ("91.9", "98.6"),
            ("98.7", "100.0"),
            ("97.4", "100.0")
        ]
    );
    assert!(csv.ends_with("F_final,,,84.6\n"), "{csv}");
}

fn write_report(
    dir: &Path,
    name: &str,
    id: &str,
    f_final: f64,
    iterations: Option<u64>,
    split: &str,
) {
    let per_category: Vec<serde_json::Value> = NECategory::ALL
        .iter()
        .map(|c| {
            serde_json::json!({"category": c.japanese_label(), "tp": 1, "fp": 0, "fn": 0,
                "precision": f_final, "recall": f_final, "f_beta": f_final})
        })
        .collect();
    let mut v = serde_json::json!({"config_id": id, "split": split, "per_category": per_category, "f_final": f_final});
    if let Some(it) = iterations {
        v["iterations"] = it.into();
    }
    fs::write(dir.join(name), v.to_string()).unwrap();
}

#[test]
fn select_picks_highest_validation_score() {
    let f = Fixture::new();
    let d = f.dir.path();
    write_report(d, "a.json", "youri-ocr1", 0.856, Some(5500), "validation");
    write_report(
        d,
        "b.json",
        "stablelm-ocr1",
        0.828,
        Some(9500),
        "validation",
    );
    write_report(d, "c.json", "elyza-ocr1", 0.805, Some(7500), "validation");
    let pattern = format!("{}/*.json", d.display());
    assert_eq!(ok(&["select", &pattern]), "youri-ocr1\t85.6\n");

    write_report(d, "d.json", "youri-late", 0.856, Some(9000), "validation");
    assert_eq!(ok(&["select", &pattern]), "youri-ocr1\t85.6\n");

    let only = format!("{}/c.json", d.display());
    assert_eq!(ok(&["select", &only]), "elyza-ocr1\t80.5\n");

    let err = fails(&["select", &format!("{}/nothing-*.json", d.display())]);
    assert!(err.contains("no reports"), "{err}");

    write_report(d, "e.json", "test-run", 0.9, None, "test");
    let err = fails(&["select", &pattern]);
    assert!(err.contains("validation"), "{err}");
}

#[test]
fn report_builds_comparison_table() {
    let f = Fixture::new();
    let d = f.dir.path();
    write_report(d, "a.json", "bert", 0.846, None, "test");
    write_report(d, "b.json", "youri", 0.856, Some(5500), "test");
    let md = ok(&["report", &format!("{}/*.json", d.display())]);
    assert_eq!(md.lines().count(), 4);
    assert!(md.contains("| youri | test |  | 5500 | 85.6 |"), "{md}");
    let csv = ok(&[
        "report",
        &format!("{}/*.json", d.display()),
        "--format",
        "csv",
    ]);
    assert!(csv.starts_with("Config,Split,Variant,Iterations,店名"));
}

#[test]
fn bad_config_is_rejected() {
    let f = Fixture::new();
    fs::write(f.path("bad.toml"), "[scoring]\nbeta = -1\n").unwrap();
    let err = fails(&[
        "prompts",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--config",
        p(&f.path("bad.toml")),
    ]);
    assert!(err.contains("beta"), "{err}");
    fs::write(f.path("bad2.toml"), "[backend]\nkind = \"http\"\n").unwrap();
    let err = fails(&[
        "extract",
        "--corpus",
        p(&f.path("corpus.jsonl")),
        "--config",
        p(&f.path("bad2.toml")),
        "--out",
        p(&f.path("x.jsonl")),
    ]);
    assert!(err.contains("endpoint"), "{err}");
}
