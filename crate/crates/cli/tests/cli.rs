use std::path::Path;
use std::process::Command;

use hoisynth::assembly::AssemblyKit;
use hoisynth::corpus::{generate_corpus, GeneratorConfig};
use hoisynth::par::Parallelism;
use hoisynth::{Scene, SceneRegistry, SceneType};
use hoisynth_cli::{export_obj, export_svg};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hoisynth"))
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = bin()
        .args(["--output", dir.to_str().unwrap()])
        .args(["--corpus", dir.join("corpus.ndjson").to_str().unwrap()])
        .args(["--checkpoints", dir.join("ckpt").to_str().unwrap()])
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn trained_run() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["datagen", "--count", "40", "--data-seed", "3"]);
    ok(dir.path(), &["train", "--graph-epochs", "2", "--layout-epochs", "2"]);
    dir
}

#[test]
fn end_to_end_commands_are_deterministic() {
    let dir = trained_run();
    let d = dir.path();
    let prompt = "There is a nightstand to the left of a double bed.";
    ok(d, &["synth", "--prompt", prompt, "--seed", "5", "--name", "a", "--svg", "--obj"]);
    ok(d, &["synth", "--prompt", prompt, "--seed", "5", "--name", "b", "--svg"]);
    for ext in ["json", "svg"] {
        let a = std::fs::read(d.join(format!("a.{ext}"))).unwrap();
        let b = std::fs::read(d.join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
    let obj = std::fs::read_to_string(d.join("a.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("o double_bed")));

    for mode in ["stylize", "rearrange", "complete"] {
        ok(d, &["synth", "--mode", mode, "--input", d.join("a.json").to_str().unwrap(), "--name", mode]);
    }
    ok(d, &["synth", "--mode", "uncond", "--name", "u"]);
    ok(d, &["export", d.join("a.json").to_str().unwrap(), "--svg", d.join("x/out.svg").to_str().unwrap()]);
    assert!(d.join("x/out.svg").exists());

    let table = ok(d, &["eval", "--ground-truth"]);
    assert!(table.contains("iRecall") && table.contains("1.0000"), "{table}");
    let table = ok(d, &["eval", "--limit", "3"]);
    assert!(table.contains("iRecall"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    for key in ["datagen", "train", "synth:a", "eval-gt", "eval"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    let hash = manifest["train"]["outputs"][d.join("ckpt/graph.ckpt").to_str().unwrap()].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["synth", "--prompt", "a bed"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    let out = run(d, &["synth", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(d, &["train"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "colour": "red"}"#).unwrap();
    let out = run(d, &["--config", cfg.to_str().unwrap(), "datagen"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    std::fs::write(&cfg, r#"{"beta": -1.0}"#).unwrap();
    let out = run(d, &["--config", cfg.to_str().unwrap(), "datagen"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(d, &["synth", "--mode", "stylize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"corpus_size": 500, "data_seed": 9}"#).unwrap();
    ok(d, &["--config", cfg.to_str().unwrap(), "datagen", "--count", "5"]);
    let text = std::fs::read_to_string(d.join("corpus.ndjson")).unwrap();
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn corrupted_checkpoint_is_a_runtime_error() {
    let dir = trained_run();
    let d = dir.path();
    let p = d.join("ckpt/layout.ckpt");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&p, bytes).unwrap();
    let out = run(d, &["synth", "--prompt", "a bed"]);
    assert_eq!(out.status.code(), Some(1));
}

fn count(doc: &roxmltree::Document, class: &str) -> usize {
    doc.descendants().filter(|n| n.attribute("class") == Some(class)).count()
}

#[test]
fn svg_is_well_formed_and_complete() {
    let kit = AssemblyKit::procedural(0).unwrap();
    let reg = SceneRegistry::builtin();
    for ty in [SceneType::Bedroom, SceneType::LivingRoom] {
        let vocab = &reg.get(&ty).unwrap().vocabulary;
        let cfg = GeneratorConfig::new(ty.clone(), 21).unwrap();
        let recs = generate_corpus(&cfg, 50, &kit, Parallelism::default()).unwrap();
        for r in &recs {
            let scene = r.to_scene(vocab, &kit.poses).unwrap();
            let svg = export_svg(&scene);
            let doc = roxmltree::Document::parse(&svg).unwrap_or_else(|e| panic!("{}: {e}", r.id));
            assert_eq!(count(&doc, "object"), scene.objects.len());
            assert_eq!(count(&doc, "human"), scene.humans.len());
            let labels: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
            for o in &scene.objects {
                assert!(labels.contains(&o.category.as_str()));
            }
            let obj = export_obj(&scene);
            let verts = obj.lines().filter(|l| l.starts_with("v ")).count();
            assert_eq!(verts, 8 * (scene.objects.len() + scene.humans.len()));
        }
    }
}

#[test]
fn svg_edge_cases() {
    let empty = Scene::empty(SceneType::Bedroom);
    let svg = export_svg(&empty);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(count(&doc, "object"), 0);
    assert!(doc.descendants().filter(|n| n.has_tag_name("line")).count() >= 2);

    let mut one = Scene::empty(SceneType::Bedroom);
    one.objects.push(hoisynth::SceneObject {
        category: "desk & <chair>".into(),
        feature_code: 0,
        action: hoisynth::HumanAction::NoneAction,
        layout: hoisynth::Layout::new([0.0, 0.0, 0.4], [0.6, 0.3, 0.4], 0.7),
        asset_id: None,
    });
    let svg = export_svg(&one);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polygon")).count(), 1);
    let label = doc.descendants().find(|n| n.has_tag_name("text")).unwrap();
    assert_eq!(label.text(), Some("desk & <chair>"));
}
