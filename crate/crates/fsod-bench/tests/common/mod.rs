//! Fixtures shared by the integration suites.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fsod_bench::dataset::{save_index, synth_fixture, DatasetIndex, IndexFormat, SynthSpec};
use fsod_bench::geometry::ImageDims;
use fsod_bench::runner::{BackendBinding, BackendBindings, DatasetRef, ExperimentConfig, Mode};
use fsod_bench::split::{
    solve, write_split_file, SeedSearchConfig, SplitAssignment, SplitConstraints, SplitInstance,
};

/// Deterministic synthetic corpus written under `dir`, with a COCO index at
/// `dir/index.json`.
pub fn corpus(
    dir: &Path,
    seed: u64,
    images: usize,
    classes: &[(&str, u64)],
) -> (DatasetIndex, PathBuf) {
    let spec = SynthSpec {
        source: "synthetic".into(),
        images,
        dims: ImageDims::new(200, 160).unwrap(),
        classes: classes
            .iter()
            .map(|(name, total_boxes)| fsod_bench::dataset::SynthClassSpec {
                name: name.to_string(),
                total_boxes: *total_boxes,
            })
            .collect(),
        min_side: 12,
        max_side: 30,
        seed,
    };
    let index = synth_fixture(&spec, dir).unwrap();
    let index_path = dir.join("index.json");
    save_index(&index, &index_path, IndexFormat::CocoJson).unwrap();
    index
        .verify_totals()
        .expect("fixture totals must recompute");
    (index, index_path)
}

/// Solve a split for the corpus and write it to `dir/split.jsonl`.
pub fn split_for(
    dir: &Path,
    index: &DatasetIndex,
    cons: SplitConstraints,
    trials: usize,
    seed: u64,
) -> (SplitAssignment, PathBuf) {
    let instance = SplitInstance::from_index(index).unwrap();
    let (assignment, _) = solve(
        &instance,
        &cons,
        &SeedSearchConfig {
            trials,
            base_seed: seed,
        },
    )
    .unwrap();
    let path = dir.join("split.jsonl");
    write_split_file(&path, &assignment).unwrap();
    (assignment, path)
}

/// Small-corpus constraints used across the suites.
pub fn small_constraints() -> SplitConstraints {
    SplitConstraints {
        m_exp: 3,
        m_test: 5,
        n_exp: 4,
        n_test: 8,
    }
}

pub fn oracle_config(
    method: &str,
    mode: Mode,
    k: u32,
    index_path: &Path,
    split_path: &Path,
    backends: BackendBindings,
) -> ExperimentConfig {
    ExperimentConfig {
        method: method.into(),
        mode,
        k,
        seed: 0,
        crop_margin: 0.1,
        prompt_template: None,
        classify_prompt_template: None,
        invalid_label_policy: Default::default(),
        workers: None,
        dataset: DatasetRef {
            index: index_path.to_path_buf(),
            format: IndexFormat::CocoJson,
            split: split_path.to_path_buf(),
        },
        backends,
    }
}

pub fn detector_bindings(binding: BackendBinding) -> BackendBindings {
    BackendBindings {
        detector: Some(binding),
        segmenter: None,
        classifier: None,
    }
}

pub fn cascade_bindings(
    segmenter: BackendBinding,
    classifier: BackendBinding,
) -> BackendBindings {
    BackendBindings {
        detector: None,
        segmenter: Some(segmenter),
        classifier: Some(classifier),
    }
}

/// A counts-only split instance with the class skeleton of a malaria-smear
/// source: six classes, one dominant, several rare ones near the split
/// minimums (the rarest holds exactly 16 boxes, forcing a 6/10 example/test
/// split for it). Rare classes co-occur in a handful of images so a feasible
/// 10-image example selection exists by construction.
pub fn malaria_skeleton_instance() -> SplitInstance {
    let n_images = 63usize;
    let mut counts: Vec<BTreeMap<String, u64>> =
        (0..n_images).map(|_| BTreeMap::new()).collect();
    fn bump(counts: &mut [BTreeMap<String, u64>], img: usize, class: &str, n: u64) {
        *counts[img].entry(class.to_string()).or_insert(0) += n;
    }
    let mut add = |img: usize, class: &str, n: u64| bump(&mut counts, img, class, n);

    // schizont: 16 boxes total; images 0-2 hold 2 each (example witness),
    // images 10-14 hold 2 each for the test side
    for img in 0..3 {
        add(img, "schizont", 2);
    }
    for img in 10..15 {
        add(img, "schizont", 2);
    }
    // gametocyte: 30 total; 2 each in images 0-2, the rest spread
    for img in 0..3 {
        add(img, "gametocyte", 2);
    }
    for img in 15..27 {
        add(img, "gametocyte", 2);
    }
    // ring: 40 total; witness images 3-5
    for img in 3..6 {
        add(img, "ring", 2);
    }
    for img in 27..44 {
        add(img, "ring", 2);
    }
    // wbc: 55 total; witness images 3-5 hold 2 each
    for img in 3..6 {
        add(img, "wbc", 2);
    }
    for img in 14..63 {
        add(img, "wbc", 1);
    }
    // trophozoite: 219 total; witness images 6-7 hold 3 each
    for img in 6..8 {
        add(img, "trophozoite", 3);
    }
    for img in 8..63 {
        add(img, "trophozoite", 3);
    }
    for img in 20..68 {
        add(img % 63, "trophozoite", 1);
    }
    // rbc: 4374 total, everywhere
    for img in 0..n_images {
        add(img, "rbc", 69);
    }
    drop(add);
    let assigned: u64 = counts
        .iter()
        .map(|c| c.get("rbc").copied().unwrap_or(0))
        .sum();
    assert!(assigned <= 4374);
    let mut remaining = 4374 - assigned;
    let mut img = 0usize;
    while remaining > 0 {
        bump(&mut counts, img % n_images, "rbc", 1);
        remaining -= 1;
        img += 1;
    }

    let inst = SplitInstance::new(
        "malaria_like",
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("slide_{i:03}"), c))
            .collect(),
    )
    .unwrap();

    // sanity: totals match the intended skeleton
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for img in &inst.images {
        for (c, n) in inst.classes.iter().zip(&img.counts) {
            *totals.entry(c.as_str()).or_insert(0) += n;
        }
    }
    assert_eq!(totals["schizont"], 16);
    assert_eq!(totals["gametocyte"], 30);
    assert_eq!(totals["ring"], 40);
    assert_eq!(totals["wbc"], 55);
    assert_eq!(totals["trophozoite"], 219);
    assert_eq!(totals["rbc"], 4374);
    inst
}
