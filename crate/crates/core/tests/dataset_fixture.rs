mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::fixture_corpus;
use g2c_core::dataset::{
    build_dataset, emit_dataset, read_jsonl, BuildConfig, BuiltDataset, Split, DROP_CROSS_SPLIT,
    DROP_INVALID_GRAPH,
};

fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (files, list) = fixture_corpus();
    let corpus = dir.join("corpus");
    for (name, text) in files {
        let path = corpus.join(name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }
    let colls = dir.join("colls.tsv");
    fs::write(&colls, list).unwrap();
    (corpus, colls)
}

fn build(dir: &Path, seed: u64) -> BuiltDataset {
    let (corpus, colls) = write_fixture(dir);
    let config = BuildConfig {
        seed,
        ..BuildConfig::default()
    };
    build_dataset(&corpus, &colls, &config).unwrap()
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let outputs: Vec<BTreeMap<String, Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|run| {
            let built = build(&tmp.path().join(run), 13);
            let out = tmp.path().join(run).join("out");
            emit_dataset(&built, &out, true).unwrap();
            fs::read_dir(&out)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        fs::read(e.path()).unwrap(),
                    )
                })
                .collect()
        })
        .collect();
    assert_eq!(outputs[0].len(), 6);
    assert_eq!(outputs[0], outputs[1]);
    let other = build(&tmp.path().join("c"), 14);
    let first = build(&tmp.path().join("d"), 13);
    assert_ne!(other.assignment, first.assignment);
}

#[test]
fn splits_follow_the_rounding_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let built = build(tmp.path(), 13);
    let mut per_lf: BTreeMap<(&str, Split), usize> = BTreeMap::new();
    for ((lf, _, _), split) in &built.assignment {
        *per_lf.entry((lf.as_str(), *split)).or_default() += 1;
    }
    let sizes = |lf| Split::ALL.map(|s| per_lf.get(&(lf, s)).copied().unwrap_or(0));
    assert_eq!(sizes("Magn"), [8, 1, 1]);
    // four instances: round(0.4) = 0, clamped to one each
    assert_eq!(sizes("Oper1"), [2, 1, 1]);
}

#[test]
fn split_instances_are_disjoint_and_cross_split_sentences_dropped() {
    let tmp = tempfile::tempdir().unwrap();
    let built = build(tmp.path(), 13);
    let mut seen: BTreeMap<(String, String, String), Split> = BTreeMap::new();
    for split in Split::ALL {
        for s in built.split(split) {
            for o in &s.occurrences {
                let key = (
                    o.lf.clone(),
                    s.sentence.lemmas[o.base.start..=o.base.end]
                        .join(" ")
                        .to_lowercase(),
                    s.sentence.lemmas[o.collocate.start..=o.collocate.end]
                        .join(" ")
                        .to_lowercase(),
                );
                assert_eq!(built.assignment[&key], split, "{key:?}");
                if let Some(prev) = seen.insert(key.clone(), split) {
                    assert_eq!(prev, split, "{key:?} in two splits");
                }
            }
        }
    }

    // every mixed sentence has one Magn and one Oper1 instance
    let mut expected_cross = 0;
    for k in 0..10 {
        let magn = ("Magn".to_string(), format!("rain{k}"), format!("heavy{k}"));
        let oper = (
            "Oper1".to_string(),
            format!("walk{}", k % 4),
            format!("take{}", k % 4),
        );
        let crosses = built.assignment[&magn] != built.assignment[&oper];
        expected_cross += crosses as usize;
        let present = Split::ALL.iter().any(|&sp| {
            built.split(sp).iter().any(|s| {
                s.sentence.tokens.len() == 5 && s.sentence.tokens[3] == format!("heavy{k}")
            })
        });
        assert_eq!(present, !crosses, "mixed sentence {k}");
    }
    assert!(expected_cross > 0);
    assert_eq!(built.stats.dropped[DROP_CROSS_SPLIT], expected_cross);
    assert_eq!(built.stats.dropped[DROP_INVALID_GRAPH], 1);
    assert_eq!(built.stats.files, 2);
    assert_eq!(built.stats.sentences_read, 10 + 4 + 10 + 2);
    assert_eq!(built.stats.sentences_matched, 10 + 4 + 10 + 1);
    assert_eq!(built.stats.sentences.total(), 24 - expected_cross);
}

#[test]
fn emitted_records_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let built = build(tmp.path(), 13);
    let out = tmp.path().join("out");
    emit_dataset(&built, &out, false).unwrap();
    assert!(!out.join("review.tsv").exists());
    for split in Split::ALL {
        let records = read_jsonl(&out.join(format!("{}.jsonl", split.name()))).unwrap();
        let expected: Vec<_> = built.split(split).iter().map(|s| s.record()).collect();
        assert_eq!(records, expected);
        for r in &records {
            r.check().unwrap();
            assert!(built
                .labels
                .lf_labels
                .contains(r.sentence_label.as_ref().unwrap()));
        }
    }
}
