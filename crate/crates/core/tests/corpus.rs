use std::collections::BTreeMap;

use hoisynth::assembly::AssemblyKit;
use hoisynth::corpus::*;
use hoisynth::eval::{irecall, scene_stats, RelationRuleConfig};
use hoisynth::groups::default_groups;
use hoisynth::par::Parallelism;
use hoisynth::prompt::{parse_prompt, PredicateLexicon};
use hoisynth::{HumanAction, SceneRegistry, SceneType};

fn kit() -> AssemblyKit {
    AssemblyKit::procedural(0).unwrap()
}

fn bedrooms(n: usize, seed: u64) -> Vec<SceneRecord> {
    let cfg = GeneratorConfig::new(SceneType::Bedroom, seed).unwrap();
    generate_corpus(&cfg, n, &kit(), Parallelism::default()).unwrap()
}

#[test]
fn records_are_valid_and_self_consistent() {
    let recs = bedrooms(300, 7);
    let reg = SceneRegistry::builtin();
    let vocab = &reg.get(&SceneType::Bedroom).unwrap().vocabulary;
    let lex = PredicateLexicon::default();
    let kit = kit();
    let cfg = RelationRuleConfig::default();
    let mut sizes = BTreeMap::new();
    for r in &recs {
        assert!((3..=12).contains(&r.len()), "{} objects", r.len());
        *sizes.entry(r.len()).or_insert(0) += 1;
        assert!(r.graph.is_symmetric());
        let scene = r.to_scene(vocab, &kit.poses).unwrap();
        let st = scene_stats(&scene, &default_groups(), 0.05);
        assert_eq!(st.collisions, 0, "{}", r.id);
        assert_eq!(st.human_violations, 0, "{}", r.id);
        assert!(r.graph.nodes.iter().any(|n| n.action != HumanAction::NoneAction));
        assert_eq!(irecall(&r.triplets, &scene, &cfg), 1.0, "{}", r.caption);
        assert!(!r.triplets.is_empty() && r.triplets.len() <= 2);

        let parsed = parse_prompt(&r.caption, vocab, &lex);
        assert!(parsed.warnings.is_empty(), "{:?} for {}", parsed.warnings, r.caption);
        assert_eq!(parsed.triplets, r.triplets);
    }
    eprintln!("object count histogram {sizes:?}");
}

#[test]
fn generation_is_deterministic_and_mode_independent() {
    let cfg = GeneratorConfig::new(SceneType::Bedroom, 3).unwrap();
    let k = kit();
    let a = generate_corpus(&cfg, 20, &k, Parallelism::Sequential).unwrap();
    let b = generate_corpus(&cfg, 20, &k, Parallelism::Rayon).unwrap();
    assert_eq!(a, b);
    let one = generate_corpus(&cfg, 1, &k, Parallelism::Sequential).unwrap();
    assert_eq!(
        serde_json::to_string(&one[0]).unwrap(),
        serde_json::to_string(&a[0]).unwrap()
    );
}

#[test]
fn other_scene_types_generate() {
    for ty in [SceneType::LivingRoom, SceneType::DiningRoom] {
        let cfg = GeneratorConfig::new(ty.clone(), 1).unwrap();
        let recs = generate_corpus(&cfg, 30, &kit(), Parallelism::default()).unwrap();
        assert!(recs.iter().all(|r| r.len() >= 3 && r.scene_type == ty));
    }
}

#[test]
fn corpus_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ndjson");
    save_corpus(&path, "empty", &[]).unwrap();
    assert!(load_corpus(&path).unwrap().1.is_empty());

    let recs = bedrooms(100, 11);
    save_corpus(&path, "gen", &recs).unwrap();
    let (h, back) = load_corpus(&path).unwrap();
    assert_eq!(h.records, 100);
    assert_eq!(back, recs);
    let first = std::fs::read(&path).unwrap();
    save_corpus(&path, "gen", &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn corrupted_corpus_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ndjson");
    let recs = bedrooms(3, 1);
    save_corpus(&path, "gen", &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"id\": oops";
    std::fs::write(&path, lines.join("\n")).unwrap();
    match load_corpus(&path) {
        Err(hoisynth::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(
        load_corpus(&dir.path().join("missing.ndjson")),
        Err(hoisynth::Error::MissingDataset(_))
    ));
}

#[test]
fn split_is_hash_stable() {
    let recs = bedrooms(200, 5);
    let test = recs.iter().filter(|r| r.split == Split::Test).count();
    assert!((5..=40).contains(&test), "{test}");
    for r in &recs {
        assert_eq!(split_for(&r.id, 0.1), r.split);
    }
}

#[test]
fn missing_front_directory() {
    let r = ingest_3dfront(
        std::path::Path::new("/nonexistent/front"),
        &SceneType::Bedroom,
        &AliasTable::default(),
        &kit(),
        FrontOptions::default(),
    );
    assert!(matches!(r, Err(hoisynth::Error::MissingDataset(_))));
}

#[test]
fn front_fixture_room() {
    let dir = tempfile::tempdir().unwrap();
    let house = serde_json::json!({
        "uid": "house-1",
        "furniture": [
            {"uid": "f1", "jid": "none-1", "category": "King-size Bed", "bbox": [2.0, 0.9, 2.1]},
            {"uid": "f2", "jid": "none-2", "category": "Nightstand", "bbox": [0.5, 0.55, 0.45]},
            {"uid": "f3", "jid": "none-3", "category": "Wardrobe"},
            {"uid": "f4", "jid": "none-4", "category": "Spaceship"}
        ],
        "scene": {"room": [
            {"type": "MasterBedroom", "instanceid": "MasterBedroom-7", "children": [
                {"ref": "f1", "pos": [0.0, 0.0, 0.0], "rot": [0.0, 0.0, 0.0, 1.0], "scale": [1.0, 1.0, 1.0]},
                {"ref": "f2", "pos": [1.4, 0.0, 0.8], "rot": [0.0, 0.0, 0.0, 1.0], "scale": [1.0, 1.0, 1.0]},
                {"ref": "f3", "pos": [-2.0, 0.0, -1.0], "rot": [0.0, 0.7071068, 0.0, 0.7071068], "scale": [1.0, 1.0, 1.0]},
                {"ref": "f4", "pos": [0.0, 0.0, 2.0], "rot": [0.0, 0.0, 0.0, 1.0], "scale": [1.0, 1.0, 1.0]}
            ]},
            {"type": "Kitchen", "instanceid": "Kitchen-1", "children": []}
        ]}
    });
    std::fs::write(dir.path().join("house-1.json"), house.to_string()).unwrap();
    let recs = ingest_3dfront(dir.path(), &SceneType::Bedroom, &AliasTable::default(), &kit(), FrontOptions::default()).unwrap();
    assert_eq!(recs.len(), 1);
    let reg = SceneRegistry::builtin();
    let vocab = &reg.get(&SceneType::Bedroom).unwrap().vocabulary;
    let cats: Vec<&str> = recs[0].graph.nodes.iter().map(|n| vocab.name(n.category)).collect();
    assert_eq!(cats, ["double bed", "nightstand", "wardrobe"]);
    assert_eq!(recs[0].id, "house-1/MasterBedroom-7");
    let bed = recs[0].layouts[0];
    assert!((bed.s[0] - 1.0).abs() < 1e-9 && (bed.s[1] - 1.05).abs() < 1e-9 && (bed.s[2] - 0.45).abs() < 1e-9);
    assert!((bed.t[2] - 0.45).abs() < 1e-9);
}
