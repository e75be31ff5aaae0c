use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unionsearch"))
        .args(args)
        .env_remove("SANTOS_LOG")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fig1_index(extra: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (lake, kb) = (fixture("fig1/lake"), fixture("fig1/kb"));
    let mut args = vec!["index", "--lake", s(&lake), "--kb", s(&kb), "--out", s(dir.path())];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

fn query(index: &Path, table: &str, intent: &str, extra: &[&str]) -> Output {
    let table = fixture(table);
    let mut args = vec!["query", "--index", s(index), "--table", s(&table), "--intent", intent];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn index_writes_five_files() {
    let dir = fig1_index(&[]);
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["edge_index.json", "meta.json", "node_index.json", "synth_rel_dict.json", "synth_type_dict.json"]
    );
}

#[test]
fn no_kb_leaves_only_synth_postings() {
    let dir = tempfile::tempdir().unwrap();
    let lake = fixture("fig1/lake");
    let o = run(&["index", "--lake", s(&lake), "--no-kb", "--out", s(dir.path())]);
    assert!(o.status.success());
    let edges = std::fs::read_to_string(dir.path().join("edge_index.json")).unwrap();
    let nodes = std::fs::read_to_string(dir.path().join("node_index.json")).unwrap();
    assert!(!edges.contains("\"kb\""));
    assert!(!nodes.contains("\"kb\""));
    assert!(nodes.contains("\"synth\""));
}

#[test]
fn missing_kb_dir_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let lake = fixture("fig1/lake");
    let o = run(&["index", "--lake", s(&lake), "--kb", "/definitely/not/here", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parks_query_ranks_the_parks_table_first() {
    let dir = fig1_index(&[]);
    let o = query(dir.path(), "fig1/queries/a_parks.csv", "Park Name", &[]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank\ttable_id\tscore\troot_column\tmatched_edge_count");
    assert!(lines[1].starts_with("1\tb_parks_films\t"));
    assert!(lines[2].starts_with("2\tc_famous_people\t"));

    let o = query(dir.path(), "fig1/queries/a_parks.csv", "0", &["--k", "1"]);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn intent_errors_have_distinct_exit_codes() {
    let dir = fig1_index(&[]);
    assert_eq!(query(dir.path(), "fig1/queries/a_parks.csv", "Nope", &[]).status.code(), Some(2));

    let blank = tempfile::tempdir().unwrap();
    let table = blank.path().join("q.csv");
    std::fs::write(&table, "x\nzzz\nqqq\n").unwrap();
    let o = run(&["query", "--index", s(dir.path()), "--table", s(&table), "--intent", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_writes_reports_and_map_variant_only_moves_map() {
    let dir = fig1_index(&[]);
    let (queries, truth) = (fixture("fig1/queries"), fixture("fig1/truth.csv"));
    let out = tempfile::tempdir().unwrap();
    let base = [
        "eval", "--index", s(dir.path()), "--queries", s(&queries), "--truth", s(&truth), "--out", s(out.path()), "--k", "2",
    ];
    let all_ranks = run(&base);
    assert!(all_ranks.status.success());
    assert!(out.path().join("report.json").exists());
    assert!(out.path().join("report.tsv").exists());

    let mut args = base.to_vec();
    args.extend_from_slice(&["--map-variant", "standard"]);
    let standard = run(&args);
    assert!(standard.status.success());

    let (p, q) = (stdout(&all_ranks), stdout(&standard));
    assert_eq!(p.lines().last().unwrap(), "mean\t0.5\t1\t0.833333333333\t");
    assert_eq!(q.lines().last().unwrap(), "mean\t0.5\t1\t1\t");
    for (a, b) in p.lines().zip(q.lines()) {
        let (a, b): (Vec<&str>, Vec<&str>) = (a.split('\t').collect(), b.split('\t').collect());
        assert_eq!((a[0], a[1], a[2], a[4]), (b[0], b[1], b[2], b[4]));
    }
}

#[test]
fn empty_truth_still_succeeds() {
    let dir = fig1_index(&[]);
    let queries = fixture("fig1/queries");
    let scratch = tempfile::tempdir().unwrap();
    let truth = scratch.path().join("truth.csv");
    std::fs::write(&truth, "query_table_id,data_lake_table_id\n").unwrap();
    let out = scratch.path().join("report");
    let o = run(&["eval", "--index", s(dir.path()), "--queries", s(&queries), "--truth", s(&truth), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}
