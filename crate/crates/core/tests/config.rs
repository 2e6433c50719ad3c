//! Loading and validating the shipped configuration.

use std::path::PathBuf;
use std::sync::Arc;

use decision_engine::config::{load_config, parse_config, validate_config, ConfigError, Problem};
use decision_engine::sim::{sim_registry, FacilitySim, SimScenario};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn registry() -> (decision_engine::PluginRegistry, tempfile::TempDir) {
    let scenario = SimScenario::load(root().join("scenarios/hybrid_facility.toml")).unwrap();
    let sim = Arc::new(parking_lot::Mutex::new(FacilitySim::new(scenario)));
    let dir = tempfile::tempdir().unwrap();
    (sim_registry(&sim, dir.path()), dir)
}

#[test]
fn shipped_config_validates() {
    let cfg = load_config(root().join("scenarios/engine.toml")).unwrap();
    let (reg, _dir) = registry();
    let v = validate_config(&cfg, &reg).unwrap();
    assert_eq!(v.transform_orders["provisioning"], vec!["shortlister".to_string(), "allocator".to_string()]);
    assert_eq!(cfg.channels[0].sources.len(), 3);
}

#[test]
fn expression_errors_carry_positions() {
    let text = std::fs::read_to_string(root().join("scenarios/engine.toml"))
        .unwrap()
        .replace(r#"count(product("allocation_plan")) > 0"#, r#"count(product("allocation_plan")) >> 0"#);
    match parse_config(&text) {
        Err(ConfigError::Expression { channel, item, line, column, .. }) => {
            assert_eq!(channel, "provisioning");
            assert!(item.contains("have_work"), "{item}");
            assert_eq!(line, 1);
            assert!(column > 30, "column {column}");
        }
        other => panic!("expected an expression error, got {other:?}"),
    }
}

#[test]
fn all_issues_are_reported_together() {
    let mut cfg = load_config(root().join("scenarios/engine.toml")).unwrap();
    cfg.channels[0].sources.retain(|s| s.name == "jobs");
    cfg.channels[0].publishers[0].plugin = "nope".into();
    let (reg, _dir) = registry();
    let issues = validate_config(&cfg, &reg).unwrap_err();
    let unproduced: Vec<_> = issues
        .iter()
        .filter_map(|i| match &i.problem {
            Problem::UnproducedProduct(p) => Some(p.as_str()),
            _ => None,
        })
        .collect();
    assert!(unproduced.contains(&"budget") && unproduced.contains(&"resources"), "{unproduced:?}");
    assert!(issues.iter().any(|i| matches!(i.problem, Problem::Plugin(_))));
    let mut sorted = issues.clone();
    sorted.sort_by(|a, b| {
        (&a.channel, &a.location, a.problem.to_string()).cmp(&(&b.channel, &b.location, b.problem.to_string()))
    });
    assert_eq!(issues, sorted);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = parse_config("archive_dir = \"a\"\nbogus = 1\n").unwrap_err();
    assert!(matches!(err, ConfigError::Syntax(ref m) if m.contains("bogus")), "{err}");
}
