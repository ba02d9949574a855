//! End-to-end checks of the command-line surface: exit codes, deterministic
//! outputs, and the file formats the subcommands produce.

use std::fs;
use std::process::Command;

use advgrad::cli::cli_main;
use advgrad::data::{gen_synthetic_2d, write_dataset};
use advgrad::nn::identity_model;

fn run_in_process(args: &[&str]) -> i32 {
    cli_main(std::iter::once("advgrad").chain(args.iter().copied()))
}

fn run_binary(args: &[&str]) -> (i32, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_advgrad"))
        .args(args)
        .output()
        .expect("spawn advgrad");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
    )
}

// Minimal well-formedness check: every opened tag closes in order.
fn assert_well_formed_xml(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        rest = &rest[start + 1..];
        let end = rest.find('>').expect("unclosed tag");
        let tag = &rest[..end];
        rest = &rest[end + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name), "mismatched closing tag");
        } else if !tag.ends_with('/') {
            stack.push(tag.chars().take_while(|c| !c.is_whitespace()).collect());
        }
    }
    assert!(stack.is_empty(), "unclosed tags {stack:?}");
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for out in [&a, &b] {
        let code = run_in_process(&[
            "synth",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
            "--train-per-class",
            "50",
            "--test-per-class",
            "10",
        ]);
        assert_eq!(code, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn attack_on_example_already_classified_as_target() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("d.bin");
    let model_path = dir.path().join("m.nnw");
    let (train, test) = gen_synthetic_2d(5, 20, 8, 0.4).unwrap();
    write_dataset(&train, &test, &data_path).unwrap();
    let model = identity_model(2);
    model.save_weights(&model_path).unwrap();

    // Identity logits classify by the larger coordinate; aim at that class.
    let point = &test.examples[0];
    let already = if point.data()[1] > point.data()[0] { 1 } else { 0 };
    let (code, stdout) = run_binary(&[
        "attack",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--index",
        "0",
        "--target",
        &already.to_string(),
        "--method",
        "Our1",
    ]);
    assert_eq!(code, 0, "stdout: {stdout}");
    assert!(stdout.contains("success=true"), "stdout: {stdout}");
    assert!(stdout.contains("l2_distance=0.000000"), "stdout: {stdout}");
    assert!(stdout.contains("iterations=0"), "stdout: {stdout}");
}

#[test]
fn attack_writes_trajectory_csv_starting_at_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("d.bin");
    let model_path = dir.path().join("m.nnw");
    let traj_path = dir.path().join("traj.csv");
    let (train, test) = gen_synthetic_2d(5, 20, 8, 0.4).unwrap();
    write_dataset(&train, &test, &data_path).unwrap();
    identity_model(2).save_weights(&model_path).unwrap();

    let point = &test.examples[1];
    let target = if point.data()[1] > point.data()[0] { 0 } else { 1 };
    let code = run_in_process(&[
        "attack",
        "--model",
        model_path.to_str().unwrap(),
        "--data",
        data_path.to_str().unwrap(),
        "--index",
        "1",
        "--target",
        &target.to_string(),
        "--method",
        "CW1",
        "--trajectory",
        traj_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&traj_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,x1,x2"));
    let first = lines.next().unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields[0], "0");
    assert!((fields[1].parse::<f64>().unwrap() - point.data()[0]).abs() < 1e-9);
    assert!((fields[2].parse::<f64>().unwrap() - point.data()[1]).abs() < 1e-9);
}

#[test]
fn figure1_produces_a_valid_svg_with_two_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let svg_path = dir.path().join("fig.svg");
    let code = run_in_process(&["figure1", "--seed", "7", "--out", svg_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_well_formed_xml(&svg);
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("viewBox=\"0 0 10 10\""));
}

#[test]
fn bench_emits_the_exact_csv_header_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("d.bin");
    let model_path = dir.path().join("m.nnw");
    let (train, test) = gen_synthetic_2d(5, 40, 20, 0.4).unwrap();
    write_dataset(&train, &test, &data_path).unwrap();
    identity_model(2).save_weights(&model_path).unwrap();

    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");
    for out in [&csv_a, &csv_b] {
        let code = run_in_process(&[
            "bench",
            "--model",
            model_path.to_str().unwrap(),
            "--data",
            data_path.to_str().unwrap(),
            "--methods",
            "Our1,CW1",
            "--kappas",
            "0",
            "--n",
            "10",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let text = fs::read_to_string(&csv_a).unwrap();
    assert!(text.starts_with("method,kappa,success_rate,mean_l2,mean_iters,n\n"));
    assert_eq!(fs::read(&csv_a).unwrap(), fs::read(&csv_b).unwrap());
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unknown subcommand and unknown flags are usage errors.
    assert_eq!(run_in_process(&["bogus"]), 1);
    assert_eq!(run_in_process(&["synth", "--nope", "1"]), 1);
    // Help is not an error.
    assert_eq!(run_in_process(&["--help"]), 0);
    // A missing input file is a runtime failure.
    let code = run_in_process(&[
        "attack",
        "--model",
        "/nonexistent/model.nnw",
        "--data",
        "/nonexistent/d.bin",
        "--index",
        "0",
        "--target",
        "1",
    ]);
    assert_eq!(code, 2);
}
