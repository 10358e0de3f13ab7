#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use inspect_core::results::{write_results, ResultRow};
use inspect_core::store;
use inspect_core::{Embedding, ExemplarRecord};

pub const FIXED_TS: &str = "2025-01-15T17:04:03.471179";

pub fn inspect<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_inspect"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("INSPECT_CONFIG")
        .output()
        .expect("run inspect")
}

pub fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rec(id: &str, label: &str, caption: &str, v: Vec<f64>) -> ExemplarRecord {
    ExemplarRecord::new(id, label, Embedding::new("fixture", v).unwrap())
        .unwrap()
        .with_caption(caption)
}

pub const NOMINAL_CAPTION: &str =
    "An microstructure image with uniformly distributed grain sizes and colors.";
pub const DEFECT_CAPTION: &str = "An microstructure image with a low single crystal structure.";

/// Exemplar and test stores reproducing the published results row for
/// `microstructure_039.png`: 72 nominal and 72 defective exemplars, with
/// class cosines 0.9 and 0.9 + ln(0.505/0.495).
pub fn microstructure_stores(dir: &Path) -> (PathBuf, PathBuf) {
    let gap = (0.505f64 / 0.495).ln();
    let (sn, sd) = (0.90f64, 0.90 + gap);
    let mut exemplars = vec![rec(
        "microstructure_234.png",
        "nominal",
        NOMINAL_CAPTION,
        vec![sn, (1.0 - sn * sn).sqrt(), 0.0, 0.0],
    )];
    for k in 0..71 {
        let c = 0.3 - 0.002 * k as f64;
        exemplars.push(rec(
            &format!("microstructure_{:03}.png", 300 + k),
            "nominal",
            NOMINAL_CAPTION,
            vec![c, 0.0, 0.0, (1.0 - c * c).sqrt()],
        ));
    }
    exemplars.push(rec(
        "microstructure_001.png",
        "defective",
        DEFECT_CAPTION,
        vec![sd, 0.0, (1.0 - sd * sd).sqrt(), 0.0],
    ));
    let severities = ["low", "medium", "high"];
    let kinds = ["band", "bimodal", "single crystal"];
    for k in 0..71 {
        let c = 0.25 - 0.002 * k as f64;
        let caption = format!(
            "An microstructure image with a {} {} structure.",
            severities[k % 3],
            kinds[(k / 3) % 3]
        );
        exemplars.push(rec(
            &format!("microstructure_{:03}.png", 2 + k),
            "defective",
            &caption,
            vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0],
        ));
    }
    let test = vec![rec("microstructure_039.png", "single-crystal", "", vec![1.0, 0.0, 0.0, 0.0])];
    let (e, t) = (dir.join("exemplars.jsonl"), dir.join("test.jsonl"));
    store::save(&exemplars, &e).unwrap();
    store::save(&test, &t).unwrap();
    (e, t)
}

pub fn write_truth(path: &Path, rows: &[(&str, &str, &str)]) {
    let mut text = String::from("id,label,sublabel,caption\n");
    for (id, label, sub) in rows {
        text.push_str(&format!("{id},{label},{sub},\n"));
    }
    fs::write(path, text).unwrap();
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) {
    write_results(rows, fs::File::create(path).unwrap()).unwrap();
}

pub fn row(id: &str, verdict: &str, defect_prob: f64, defect_caption: &str) -> ResultRow {
    ResultRow {
        datetime_of_operation: FIXED_TS.into(),
        num_few_shot_nominal_imgs: 50,
        image_name: id.into(),
        classification_result: verdict.into(),
        non_defect_prob: 1.0 - defect_prob,
        defect_prob,
        nominal_description: format!("Image n.png: {NOMINAL_CAPTION}"),
        defective_description: format!("Image d.png: {defect_caption}"),
    }
}

/// Generates an STS dataset with the CLI and embeds it with the
/// mock-stats encoder; returns the loaded records.
pub fn sts_records(dir: &Path, counts: (usize, usize, usize), seed: u64, dim: usize) -> Vec<ExemplarRecord> {
    let images = dir.join("sts");
    let (n, l, g) = counts;
    ok(&inspect([
        "sts", "--out", p(&images),
        "--nominal", &n.to_string(), "--local", &l.to_string(), "--global", &g.to_string(),
        "--seed", &seed.to_string(),
    ]));
    let store_path = dir.join("sts.jsonl");
    ok(&inspect([
        "embed", "--input", p(&images), "--output", p(&store_path),
        "--backend", "mock-stats", "--dim", &dim.to_string(),
    ]));
    store::load(&store_path).unwrap()
}
