#![allow(dead_code)]

use std::fs;
use std::path::Path;

use mllm_iqa::dataset::{Dataset, ImageRecord, ManifestHeader, Role, Scenario};

pub fn record(id: &str, role: Role, group: &str, mos: f64, std: f64) -> ImageRecord {
    ImageRecord {
        image_id: id.to_owned(),
        uri: format!("img/{id}.png"),
        role,
        content_group: group.to_owned(),
        mos,
        std,
        dataset_tag: "synthetic".into(),
        distortion_meta: None,
    }
}

/// Writes one small file per record (distinct bytes) and the manifest at `dir/data.jsonl`.
pub fn materialize(dir: &Path, dataset: &Dataset) {
    fs::create_dir_all(dir.join("img")).unwrap();
    for r in dataset.records() {
        fs::write(dir.join(&r.uri), format!("pixels of {}", r.image_id)).unwrap();
    }
    dataset.save(&dir.join("data.jsonl")).unwrap();
}

pub fn nr_dataset(mos: &[f64]) -> Dataset {
    let records = mos
        .iter()
        .enumerate()
        .map(|(i, &m)| record(&format!("nr{i:03}"), Role::Standalone, "", m, 5.0))
        .collect();
    let header = ManifestHeader {
        scale_min: 0.0,
        scale_max: 100.0,
        scenario: Scenario::NoReference,
    };
    Dataset::new(header, records).unwrap()
}

/// `groups` contents with `per_group` distorted images each; mos increases with the index.
pub fn fr_dataset(groups: usize, per_group: usize) -> Dataset {
    let mut records = Vec::new();
    for g in 0..groups {
        let group = format!("c{g:02}");
        records.push(record(
            &format!("{group}_ref"),
            Role::Reference,
            &group,
            100.0,
            0.0,
        ));
        for d in 0..per_group {
            let mos = 5.0 + 90.0 * d as f64 / per_group as f64 + g as f64 * 0.1;
            records.push(record(
                &format!("{group}_d{d:02}"),
                Role::Distorted,
                &group,
                mos,
                4.0,
            ));
        }
    }
    let header = ManifestHeader {
        scale_min: 0.0,
        scale_max: 100.0,
        scenario: Scenario::FullReference,
    };
    Dataset::new(header, records).unwrap()
}

/// Average ranks by direct counting: 1 + #smaller + (#equal − 1)/2.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_two_pass(&ranks_by_counting(x), &ranks_by_counting(y))
}
