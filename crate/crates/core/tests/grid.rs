//! The full source-to-target grid on tiny synthetic dataset folders.

use std::path::Path;

use fewshot_da::bench::{emit_report, grid_configs, run_grid, synthesize_domains, write_dataset_csv, ExperimentConfig, Method, SyntheticDomainSpec};

fn populate(root: &Path) {
    for (dir, n) in [("dataset1", 5), ("dataset2", 1), ("dataset3", 12)] {
        std::fs::create_dir_all(root.join(dir)).unwrap();
        for i in 0..n {
            let spec = SyntheticDomainSpec {
                source_len: 80,
                target_len: 10,
                target_priors: vec![0.25; 4],
                seed: 100 * n as u64 + i as u64,
                ..Default::default()
            };
            let (s, _) = synthesize_domains(&spec).unwrap();
            write_dataset_csv(&s, root.join(dir).join(format!("f{:02}.csv", i + 1))).unwrap();
        }
    }
}

#[test]
fn grid_has_21_rows_and_154_experiments() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let configs = grid_configs(dir.path(), &ExperimentConfig::default(), &[Method::Lr, Method::Ss]).unwrap();
    assert_eq!(configs.len(), 42);
    let rows: Vec<&ExperimentConfig> = configs.iter().filter(|c| c.method == Method::Lr).collect();
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0].name, "1_{1-5}-2");
    assert!(rows[0].separate_sources && rows[20].separate_sources);
    assert_eq!(rows.iter().filter(|c| c.separate_sources).count(), 2);

    let base = ExperimentConfig { evals: 1, ..Default::default() };
    let lr = grid_configs(dir.path(), &base, &[Method::Lr]).unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir(&out).unwrap();
    let results = run_grid(&lr, &out).unwrap();
    assert_eq!(results.iter().map(|r| r.cells.len()).sum::<usize>(), 154);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 21);
    let table = std::fs::read_to_string({
        let p = out.join("table.md");
        emit_report(&results, &p).unwrap();
        p
    })
    .unwrap();
    assert_eq!(table.lines().count(), 2 + 21 + 1);
}

#[test]
fn missing_dataset_folder_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("dataset1")).unwrap();
    assert!(grid_configs(dir.path(), &ExperimentConfig::default(), &[Method::Lr]).is_err());
}
