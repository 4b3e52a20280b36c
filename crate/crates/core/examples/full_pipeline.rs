//! The whole pipeline through the command-line front end, writing into a
//! temporary directory: synth, train-classifier, label, train-generator (both
//! kinds), calibrate, generate, evaluate.

use std::path::Path;

fn bfpgen(args: &[&str]) {
    let argv = std::iter::once("bfpgen").chain(args.iter().copied()).map(std::ffi::OsString::from);
    let code = bfp_textgen::cli::run(argv);
    assert_eq!(code, 0, "{args:?} failed");
}

fn main() {
    let root = std::env::temp_dir().join("bfp-pipeline");
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    bfpgen(&["synth", "--n", "800", "--seed", "1", "--out", &p("data")]);
    bfpgen(&["train-classifier", "--corpus", &p("data/corpus.jsonl"), "--epochs", "3", "--out", &p("cls")]);
    bfpgen(&["label", "--model", &p("cls/classifier.json"), "--input", &p("data/corpus.jsonl"), "--out", &p("lab")]);
    let labeled = p("lab/labeled.jsonl");
    for (dir, extra) in [("gen", None), ("unc", Some("--unconditional"))] {
        let mut args = vec!["train-generator", "--corpus", &labeled, "--epochs", "3", "--hidden-dim", "48"];
        args.extend(extra);
        let out = p(dir);
        args.extend(["--out", &out]);
        bfpgen(&args);
    }
    bfpgen(&["calibrate", "--lexicon", &p("data/lexicon.json"), "--input", &p("lab/labeled.jsonl"), "--out", &p("cal")]);
    bfpgen(&[
        "generate", "--model", &p("gen/generator.json"), "--condition", "E=1,A=0,C=1,N=0,O=1", "--n", "5",
        "--seed-pool", &p("data/seed_pool.txt"), "--temperature", "0.8", "--out", &p("texts"),
    ]);
    bfpgen(&[
        "evaluate", "--model", &p("gen/generator.json"), "--baseline", &p("unc/generator.json"),
        "--lexicon", &p("data/lexicon.json"), "--thresholds", &p("cal/thresholds.json"),
        "--seed-pool", &p("data/seed_pool.txt"), "--n-per-condition", "40", "--temperature", "0.7", "--out", &p("eval"),
    ]);
    let show = |f: &str| println!("{}", std::fs::read_to_string(Path::new(&p(f))).unwrap());
    show("texts/texts.jsonl");
    show("eval/table.txt");
}
