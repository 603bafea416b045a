use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use vinmap::config::{Overrides, PipelineConfig};
use vinmap::formats;
use vinmap::pipeline::{self, Layout, PipelineError, Stage};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/alsace/pipeline.toml")
}

fn config(out: &Path) -> PipelineConfig {
    let o = Overrides {
        output_dir: Some(out.to_path_buf()),
        ..Overrides::default()
    };
    PipelineConfig::load(&fixture(), &o).unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn fixture_portfolio_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    pipeline::run_pipeline(&cfg).unwrap();
    let t = formats::read_table(&Layout::new(dir.path()).portfolio()).unwrap();
    assert_eq!(t.rows.len(), 19);
    let row = t
        .rows
        .iter()
        .map(|(_, r)| r)
        .find(|r| r[0] == "67003" && r[1] == "1B001M Crémant d'Alsace blanc")
        .unwrap();
    assert_eq!(row[4], "260");
    assert_eq!(row[6], "MATCHED");
    let y: f64 = row[3].parse().unwrap();
    assert!((y - 73.16).abs() < 1e-9);
}

#[test]
fn staged_run_matches_end_to_end() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_pipeline(&config(a.path())).unwrap();
    let cfg = config(b.path());
    pipeline::run_ingest(&cfg).unwrap();
    pipeline::run_link(&cfg).unwrap();
    pipeline::run_yields(&cfg).unwrap();
    pipeline::run_solve(&cfg).unwrap();
    pipeline::run_validate(&cfg).unwrap();
    pipeline::run_value(&cfg).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs", k.display());
    }
}

#[test]
fn later_stages_name_the_missing_prior_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let prior = |r: Result<(), PipelineError>| match r {
        Err(PipelineError::MissingIntermediate { prior, .. }) => prior,
        other => panic!("expected a missing intermediate, got {other:?}"),
    };
    assert_eq!(prior(pipeline::run_solve(&cfg)), Stage::Ingest);
    assert_eq!(prior(pipeline::run_link(&cfg)), Stage::Ingest);
    pipeline::run_ingest(&cfg).unwrap();
    assert_eq!(prior(pipeline::run_validate(&cfg)), Stage::Solve);
    assert_eq!(prior(pipeline::run_value(&cfg)), Stage::Solve);
    pipeline::run_solve(&cfg).unwrap();
    assert_eq!(prior(pipeline::run_value(&cfg)), Stage::Yields);
    let e = pipeline::run_value(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("vinmap yields"));
}

#[test]
fn solve_on_a_dumped_problem_triple() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.k_starts = 3;
    let report = pipeline::run_synth(&cfg).unwrap();
    assert!(report.max_row_error < 1e-9);
    let synth = Layout::new(dir.path()).synth_dir();
    pipeline::run_solve_from(&cfg, Some(&synth)).unwrap();
    let problem = formats::read_problem(&synth).unwrap();
    let solution = formats::read_solution(&Layout::new(dir.path()).solution()).unwrap();
    let values: Vec<f64> = (0..problem.cells().len())
        .map(|i| {
            let (a, c) = problem.cell_key(i);
            solution
                .cells
                .get(&(a.to_string(), c.to_string()))
                .copied()
                .unwrap_or(0.0)
        })
        .collect();
    assert!(problem.max_violation(&values) <= 1e-6);
    assert_eq!(
        solution.cells.len(),
        values
            .iter()
            .filter(|v| **v > formats::SOLUTION_MIN_HECTARES)
            .count()
    );
}

#[test]
fn validate_two_solution_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    pipeline::run_ingest(&cfg).unwrap();
    pipeline::run_solve(&cfg).unwrap();
    let starts_dir = Layout::new(dir.path()).starts_dir();
    let starts: Vec<PathBuf> = formats::list_files(&starts_dir)
        .unwrap()
        .iter()
        .map(|p| starts_dir.join(p))
        .collect();
    let r = pipeline::compare_solution_files(&starts[..2], 100.0).unwrap();
    assert_eq!(r.pair_count, 19);
    assert!(r.kendall_tau.is_some());
    let same =
        pipeline::compare_solution_files(&[starts[0].clone(), starts[0].clone()], 100.0).unwrap();
    assert_eq!(same.kendall_tau, Some(1.0));
}

#[test]
fn known_cells_are_fixed_and_merged_back() {
    let dir = tempfile::tempdir().unwrap();
    let known = dir.path().join("champagne.csv");
    fs::write(&known, "appellation;insee;surface\n1B053S;67051;1.0\n").unwrap();
    let mut cfg = config(&dir.path().join("out"));
    cfg.inputs.champagne = Some(known);
    pipeline::run_pipeline(&cfg).unwrap();
    let layout = Layout::new(&cfg.output_dir);
    let problem = formats::read_problem(&layout.problem_dir()).unwrap();
    assert!(problem.cell_index("1B053S", "67051").is_none());
    let solution = formats::read_solution(&layout.solution()).unwrap();
    assert_eq!(
        solution.cells[&("1B053S".to_string(), "67051".to_string())],
        1.0
    );
    let t = formats::read_table(&layout.portfolio()).unwrap();
    assert_eq!(t.rows.len(), 19);
}

#[test]
fn non_pgi_surface_adds_a_pseudo_appellation() {
    let dir = tempfile::tempdir().unwrap();
    let dept = dir.path().join("non_pgi.csv");
    fs::write(&dept, "department;surface\n67;100\n").unwrap();
    let mut cfg = config(&dir.path().join("out"));
    cfg.inputs.non_pgi_by_department = Some(dept);
    pipeline::run_ingest(&cfg).unwrap();
    let layout = Layout::new(&cfg.output_dir);
    let mask = formats::read_mask(&layout.mask()).unwrap();
    assert_eq!(mask.len(), 19 + 3);
    let report = fs::read_to_string(layout.ingest_report()).unwrap();
    assert!(report.contains("\"file\":\"pseudo_appellations\",\"rows\":0,\"records\":1"));
}
