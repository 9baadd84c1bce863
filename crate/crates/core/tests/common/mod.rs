#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use vidrag_core::decouple::Query;
use vidrag_core::ports::mock::MockFixtures;

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo")
}

pub fn demo_video() -> PathBuf {
    demo_dir().join("video")
}

pub fn fixtures() -> MockFixtures {
    MockFixtures::load(&demo_dir()).unwrap()
}

/// Copy of the demo frame directory, minus any file named in `skip`.
pub fn copy_video(dst: &Path, skip: &[&str]) -> PathBuf {
    let out = dst.join("video");
    fs::create_dir_all(&out).unwrap();
    for e in fs::read_dir(demo_video()).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if !skip.contains(&name.as_str()) {
            fs::copy(&p, out.join(&name)).unwrap();
        }
    }
    out
}

pub fn hats() -> Query {
    Query::new("How much do the hats cost?").with_options(["A. 10 dollars", "B. 20 dollars", "C. 30 dollars", "D. free"])
}

pub fn exit() -> Query {
    Query::new("Which exit should visitors take?").with_options(["A. Exit 3", "B. Exit 7", "C. Exit 12", "D. Exit 40"])
}

pub fn dog() -> Query {
    Query::new("Where does the dog sit relative to the bicycle?")
        .with_options(["A. to its left", "B. to its right", "C. on top of it", "D. far away"])
}

pub fn opened() -> Query {
    Query::new("When did the market open?").with_options(["A. this morning", "B. last week", "C. yesterday", "D. next month"])
}
