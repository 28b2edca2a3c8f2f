#![allow(dead_code)]

use std::path::PathBuf;

use cfprobe::model::Model;
use cfprobe::tabular::Dataset;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn pima() -> Dataset {
    let r = root();
    Dataset::load(r.join("data/pima.csv"), r.join("data/pima.schema.json")).expect("pima fixture")
}

pub fn german() -> Dataset {
    let r = root();
    Dataset::load(r.join("data/german_credit.csv"), r.join("data/german_credit.schema.json")).expect("german fixture")
}

pub fn pima_model(dataset: &Dataset) -> Model {
    Model::load(root().join("models/pima.json"), &dataset.schema).expect("pima model")
}

pub fn german_model(dataset: &Dataset) -> Model {
    Model::load(root().join("models/german_credit.json"), &dataset.schema).expect("german model")
}

pub fn admissions() -> Dataset {
    let r = root();
    Dataset::load(r.join("data/admissions.csv"), r.join("data/admissions.schema.json")).expect("admissions fixture")
}

pub fn admissions_model(dataset: &Dataset) -> Model {
    Model::load(root().join("models/admissions.json"), &dataset.schema).expect("admissions model")
}
