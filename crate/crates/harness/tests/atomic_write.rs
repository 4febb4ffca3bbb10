use std::fs;

use lrlab_harness::io::{atomic_write, read_json, write_json};

#[test]
fn write_replaces_whole_file_and_leaves_no_temp() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    atomic_write(&path, b"a much longer first version").unwrap();
    atomic_write(&path, b"short").unwrap();
    assert_eq!(fs::read(&path).unwrap(), b"short");
    let names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec![std::ffi::OsString::from("run.json")]);
}

#[test]
fn failed_write_keeps_the_previous_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    write_json(&path, &vec![1, 2, 3]).unwrap();
    // A directory squatting on the temp name makes the write fail before the rename.
    fs::create_dir(dir.path().join(".run.json.tmp")).unwrap();
    assert!(write_json(&path, &vec![4]).is_err());
    assert_eq!(read_json::<Vec<i32>>(&path).unwrap(), vec![1, 2, 3]);
}

#[test]
fn missing_directory_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent/run.json");
    let err = atomic_write(&path, b"x").unwrap_err();
    assert!(err.to_string().contains("absent"), "{err}");
}
