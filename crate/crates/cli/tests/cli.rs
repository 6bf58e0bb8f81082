// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neuronscope::synth::{write_demo_store, DemoSpec};
use serde_json::Value;

fn demo(dir: &Path) -> PathBuf {
    let spec = DemoSpec {
        d_ffn: 64,
        context_len: 256,
        full_docs: 96,
        ..DemoSpec::default()
    };
    write_demo_store(dir.join("store"), &spec).unwrap().0
}

fn neuronscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuronscope"))
        .args(args)
        .env("NEURONSCOPE_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

/// Every file under `root` by relative path.
fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn dead_only_bundle_holds_layer_summaries_only() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    let cfg = dir.path().join("dead.toml");
    std::fs::write(
        &cfg,
        format!(
            "store = {:?}\noutput = {:?}\nanalyses = [\"dead\"]\n",
            s(&store),
            s(&dir.path().join("out"))
        ),
    )
    .unwrap();
    let o = neuronscope(&["report", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = dir.path().join("out");
    let r = report(&out);
    assert_eq!(r["analyses"], serde_json::json!(["dead"]));
    assert_eq!(
        r["results"].as_object().unwrap().keys().collect::<Vec<_>>(),
        ["dead"]
    );
    let listed: Vec<&str> = r["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    assert!(listed.iter().all(|p| p.starts_with("dead/")), "{listed:?}");
    assert!(listed.contains(&"dead/summary.json"));
    let on_disk: Vec<String> = files(&out).into_keys().filter(|p| p != "report.json").collect();
    assert_eq!(on_disk, listed);

    // Listed hashes are the hashes of the files.
    use sha2::{Digest, Sha256};
    for a in r["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn two_runs_are_byte_identical_apart_from_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = neuronscope(&["all", "--store", s(&store), "--out", s(out), "--jobs", jobs]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (mut fa, mut fb) = (files(&a), files(&b));
    assert!(fa.len() > 20, "bundle has {} files", fa.len());
    let strip = |m: &mut BTreeMap<String, Vec<u8>>| {
        let mut r: Value = serde_json::from_slice(&m.remove("report.json").unwrap()).unwrap();
        assert!(r["generated_at"].is_string());
        r.as_object_mut().unwrap().remove("generated_at");
        r
    };
    assert!(
        strip(&mut fa) == strip(&mut fb),
        "report.json differs beyond generated_at"
    );
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (path, bytes) in &fa {
        assert!(bytes == &fb[path], "{path} differs between runs");
    }
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[positional]\nepsilon = 0.05\nmin_runn = 10\n").unwrap();
    let o = neuronscope(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("min_runn"), "{err}");

    let o = neuronscope(&["validate", "--set", "ngram.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn out_of_range_values_are_reported_per_field() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    let o = neuronscope(&[
        "analyze",
        "ngram",
        "--store",
        s(&store),
        "--out",
        s(&dir.path().join("o")),
        "--coverage",
        "1.5",
        "--set",
        "positional.weak_band=-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("ngram.coverage") && err.contains("positional.weak_band"),
        "{err}"
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn corrupt_store_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    let act = store.join("act_1.bin");
    let len = std::fs::metadata(&act).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&act).unwrap();
    f.set_len(len - 7).unwrap();
    let o = neuronscope(&["validate", "--store", s(&store)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = neuronscope(&[
        "analyze",
        "dead",
        "--store",
        s(&store),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("act_1.bin"));
}

#[test]
fn missing_weights_degrade_to_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    std::fs::remove_file(store.join("unembed.bin")).unwrap();
    let out = dir.path().join("o");
    let o = neuronscope(&[
        "analyze",
        "suppression",
        "--store",
        s(&store),
        "--out",
        s(&out),
        "--k",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let warnings = r["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().contains("unembed.bin"));
    assert_eq!(r["config"]["suppression"]["k"], 5);
}

#[test]
fn validate_reports_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = demo(dir.path());
    let o = neuronscope(&["validate", "--store", s(&store), "--layers", "1-2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["selected_layers"], serde_json::json!([1, 2]));
    assert_eq!(v["events_per_layer"].as_array().unwrap().len(), 4);

    let o = neuronscope(&["validate", "--store", s(&store), "--layers", "7"]);
    assert_eq!(o.status.code(), Some(2));
}
