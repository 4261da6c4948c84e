//! Black-box tests of the command-line binary: output routing, exit codes,
//! determinism, and file-format round trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const E1_TEXT: &str = "3 2\n5 4 7\n10 2 1\n3 6 6\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmcs-splp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("CMCS_SPLP_THREADS").output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_e1(dir: &Path) -> PathBuf {
    let path = dir.join("e1.splp");
    std::fs::write(&path, E1_TEXT).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_then_verify_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());
    let sol = dir.path().join("e1.sol");

    let solved = run(&["solve", s(&inst), "--iterations", "200", "-o", s(&sol)]);
    assert_eq!(code(&solved), 0, "{}", stderr(&solved));
    assert!(
        stdout(&solved).starts_with("solve\te1\t"),
        "summary goes to stdout when -o is given: {:?}",
        stdout(&solved)
    );
    let text = std::fs::read_to_string(&sol).unwrap();
    assert!(text.starts_with("value "), "solution file: {:?}", text);

    let verified = run(&["verify", s(&inst), s(&sol)]);
    assert_eq!(code(&verified), 0, "{}", stderr(&verified));
    assert!(stdout(&verified).contains("match"), "{}", stdout(&verified));
}

#[test]
fn solve_without_output_prints_a_verifiable_solution() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());

    let solved = run(&["solve", s(&inst), "--iterations", "200"]);
    assert_eq!(code(&solved), 0, "{}", stderr(&solved));
    assert!(stdout(&solved).starts_with("value "), "{:?}", stdout(&solved));
    assert!(stderr(&solved).contains("solve\te1\t"), "summary goes to stderr: {}", stderr(&solved));

    // The captured stdout is itself a valid solution file.
    let sol = dir.path().join("piped.sol");
    std::fs::write(&sol, stdout(&solved)).unwrap();
    let verified = run(&["verify", s(&inst), s(&sol)]);
    assert_eq!(code(&verified), 0, "{}", stderr(&verified));
}

#[test]
fn iteration_capped_runs_are_reproducible_and_nested() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());
    let (a, b) = (dir.path().join("a.sol"), dir.path().join("b.sol"));

    let first = run(&["solve", s(&inst), "--seed", "7", "--iterations", "500", "-o", s(&a)]);
    let second = run(&["solve", s(&inst), "--seed", "7", "--iterations", "500", "-o", s(&b)]);
    assert_eq!(code(&first), 0);
    assert_eq!(code(&second), 0);
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap(),
        "same seed and iteration cap must reproduce the identical solution file"
    );

    // A longer run with the same seed extends the same trajectory, so its
    // best value can only improve or hold.
    let value_of = |iters: &str| -> i64 {
        let out = run(&["solve", s(&inst), "--seed", "7", "--iterations", iters]);
        assert_eq!(code(&out), 0);
        stdout(&out).lines().next().unwrap().strip_prefix("value ").unwrap().parse().unwrap()
    };
    let (v50, v500, v5000) = (value_of("50"), value_of("500"), value_of("5000"));
    assert!(v500 <= v50, "500 iterations gave {} but 50 gave {}", v500, v50);
    assert!(v5000 <= v500, "5000 iterations gave {} but 500 gave {}", v5000, v500);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());

    let unknown_flag = run(&["solve", s(&inst), "--no-such-flag"]);
    assert_eq!(code(&unknown_flag), 1);

    let unknown_preset = run(&["solve", s(&inst), "--preset", "nope"]);
    assert_eq!(code(&unknown_preset), 1, "{}", stderr(&unknown_preset));

    let zero_restarts = run(&["solve", s(&inst), "--restarts", "0"]);
    assert_eq!(code(&zero_restarts), 1);
    assert!(stderr(&zero_restarts).contains("restarts must be positive"));

    let zero_budget = run(&["solve", s(&inst), "--budget-ms", "0"]);
    assert_eq!(code(&zero_budget), 1);
    assert!(stderr(&zero_budget).contains("budget must be positive"));

    let conflicting = run(&["solve", s(&inst), "--config", "x.cmcs", "--preset", "paper-2"]);
    assert_eq!(code(&conflicting), 1);

    let bad_class = run(&["generate", "--class", "z", "--m", "5", "--n", "5"]);
    assert_eq!(code(&bad_class), 1);

    let asymmetric = run(&[
        "generate", "--class", "a", "--m", "5", "--n", "6", "--symmetric",
    ]);
    assert_eq!(code(&asymmetric), 1, "{}", stderr(&asymmetric));

    let bad_pool = run(&["enumerate", "--pool", "other", "--lambda", "2"]);
    assert_eq!(code(&bad_pool), 1);

    let bad_lambda = run(&["enumerate", "--lambda", "0"]);
    assert_eq!(code(&bad_lambda), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());

    let missing = run(&["solve", s(&dir.path().join("nowhere.splp"))]);
    assert_eq!(code(&missing), 2);

    let garbage = dir.path().join("garbage.splp");
    std::fs::write(&garbage, "this is not an instance\n").unwrap();
    let unparsable = run(&["solve", s(&garbage)]);
    assert_eq!(code(&unparsable), 2, "{}", stderr(&unparsable));

    let bad_config = dir.path().join("bad.cmcs");
    std::fs::write(&bad_config, "cmcs-config 1\nnot a real body\n").unwrap();
    let unparsable_config = run(&["solve", s(&inst), "--config", s(&bad_config)]);
    assert_eq!(code(&unparsable_config), 2, "{}", stderr(&unparsable_config));

    let empty_sol = dir.path().join("empty.sol");
    std::fs::write(&empty_sol, "\n").unwrap();
    let unparsable_sol = run(&["verify", s(&inst), s(&empty_sol)]);
    assert_eq!(code(&unparsable_sol), 2);
}

#[test]
fn value_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());
    let sol = dir.path().join("tampered.sol");
    // Sites 2 and 3 cost 16, not the stated 999.
    std::fs::write(&sol, "value 999\n2 3\n").unwrap();
    let out = run(&["verify", s(&inst), s(&sol)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stdout(&out).contains("mismatch"), "{}", stdout(&out));
    assert!(stdout(&out).contains("\t16\t999\t"), "computed and stated: {}", stdout(&out));
}

#[test]
fn enumerate_counts_are_exact() {
    let two = run(&["enumerate", "--lambda", "2", "--count-only"]);
    assert_eq!(code(&two), 0);
    assert_eq!(stdout(&two), "feasible 1056, meaningful 216\n");

    let three = run(&["enumerate", "--lambda", "3", "--count-only"]);
    assert_eq!(code(&three), 0);
    assert_eq!(stdout(&three), "feasible 160380, meaningful 37976\n");
}

#[test]
fn enumerate_dump_blocks_are_loadable_configs() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());

    let dump = run(&["enumerate", "--lambda", "2"]);
    assert_eq!(code(&dump), 0);
    assert!(stderr(&dump).contains("meaningful\t216"), "{}", stderr(&dump));
    let text = stdout(&dump);
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 216);
    let first = blocks[0];
    assert!(first.starts_with("# "), "dump block carries its id: {:?}", first);

    // A block is a valid configuration file as-is (the id line is a comment).
    let config = dir.path().join("first.cmcs");
    std::fs::write(&config, first).unwrap();
    let solved = run(&["solve", s(&inst), "--config", s(&config), "--iterations", "100"]);
    assert_eq!(code(&solved), 0, "{}", stderr(&solved));
}

#[test]
fn generated_instances_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.splp");
    let generated = run(&[
        "generate", "--class", "b", "--m", "25", "--n", "20", "--seed", "3", "-o", s(&path),
    ]);
    assert_eq!(code(&generated), 0, "{}", stderr(&generated));
    assert!(stdout(&generated).starts_with("generate\tga25x20b-3\t"), "{}", stdout(&generated));

    let solved = run(&["solve", s(&path), "--iterations", "300"]);
    assert_eq!(code(&solved), 0, "{}", stderr(&solved));
    assert!(stdout(&solved).starts_with("value "));
}

#[test]
fn bench_tabulates_references_and_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let instances = dir.path().join("instances");
    std::fs::create_dir(&instances).unwrap();
    write_e1(&instances);
    let gen = run(&[
        "generate", "--class", "a", "--m", "12", "--n", "10", "--seed", "4",
        "-o", s(&instances.join("small.splp")),
    ]);
    assert_eq!(code(&gen), 0);

    // Kept in the same shape as the shipped reference table: comments and a
    // trailing status column the loader must ignore.
    let refs = dir.path().join("refs.tsv");
    std::fs::write(&refs, "# name\tvalue\tstatus\ne1\t16\toptimal\n").unwrap();

    let out = run(&[
        "bench", s(&instances), "--references", s(&refs), "--seeds", "2", "--iterations", "400",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "instance\tseed\tvalue\treference\tdiff");
    assert_eq!(lines.len(), 6, "header, 2 instances x 2 seeds, summary: {}", text);
    let e1_rows: Vec<&&str> = lines.iter().filter(|l| l.starts_with("e1\t")).collect();
    let small_rows: Vec<&&str> = lines.iter().filter(|l| l.starts_with("small\t")).collect();
    assert_eq!(e1_rows.len(), 2);
    assert_eq!(small_rows.len(), 2);
    for row in &e1_rows {
        assert!(row.contains("\t16\t"), "e1 rows carry the reference: {}", row);
    }
    for row in &small_rows {
        assert!(row.ends_with("\tn/a\tn/a"), "unreferenced rows say n/a: {}", row);
    }
    let summary = lines[5];
    let fields: Vec<&str> = summary.split('\t').collect();
    assert_eq!(fields[0], "summary");
    let counted: usize = [fields[2], fields[4], fields[6]]
        .iter()
        .map(|f| f.parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, 2, "only referenced rows are classified: {}", summary);
}

#[test]
fn tune_smoke_reuses_records_and_reproduces_the_winner() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tuned.cmcs");
    let records = dir.path().join("tuned.records.tsv");
    let args = [
        "tune", "--lambda", "2", "--tests", "8", "--size-min", "12", "--size-max", "16",
        "--budget-ms", "2", "--seed", "5", "-o", s(&config), "--records", s(&records),
    ];

    let first = run(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("enumerated\t216"), "{}", text);
    assert!(text.contains("tests\t8"), "{}", text);
    let winner = text
        .lines()
        .find_map(|l| l.strip_prefix("winner\t"))
        .expect("winner line")
        .to_string();
    assert_eq!(winner.len(), 16, "configuration ids are 16 hex digits: {}", winner);
    assert!(stderr(&first).contains("wrote "), "{}", stderr(&first));
    let written = std::fs::read_to_string(&config).unwrap();
    assert!(written.contains("tuned lambda=2 seed=5"), "{}", written);
    assert!(records.is_file());

    // The winner file loads and runs.
    let inst = write_e1(dir.path());
    let solved = run(&["solve", s(&inst), "--config", s(&config), "--iterations", "100"]);
    assert_eq!(code(&solved), 0, "{}", stderr(&solved));

    // A rerun over the same record store replays everything.
    let second = run(&args);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    let text = stdout(&second);
    assert!(text.contains("new_evaluations\t0"), "{}", text);
    assert!(text.contains(&format!("winner\t{}", winner)), "{}", text);
}

#[test]
fn thread_env_var_overrides_and_warns_when_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());
    let sol = dir.path().join("e1.sol");
    std::fs::write(&sol, "value 16\n2 3\n").unwrap();

    let honored = bin()
        .args(["verify", s(&inst), s(&sol)])
        .env("CMCS_SPLP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&honored), 0, "{}", stderr(&honored));

    let malformed = bin()
        .args(["verify", s(&inst), s(&sol)])
        .env("CMCS_SPLP_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&malformed), 0);
    assert!(
        stderr(&malformed).contains("ignoring malformed CMCS_SPLP_THREADS"),
        "{}",
        stderr(&malformed)
    );
}

#[test]
fn pretty_format_renders_human_lines() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_e1(dir.path());
    let sol = dir.path().join("e1.sol");
    std::fs::write(&sol, "value 16\n2 3\n").unwrap();

    let verified = run(&["--format", "pretty", "verify", s(&inst), s(&sol)]);
    assert_eq!(code(&verified), 0);
    assert_eq!(stdout(&verified), "instance e1: computed 16, stated 16: match\n");

    let solved = run(&["--format", "pretty", "solve", s(&inst), "--iterations", "100"]);
    assert_eq!(code(&solved), 0);
    assert!(stderr(&solved).contains("instance e1: value "), "{}", stderr(&solved));
}
