use std::path::Path;

use semgraph::cli::load_sweep_spec;
use semgraph::sweep::preset;

fn config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_sweep_specs_match_presets() {
    for name in ["fig6", "fig7", "fig8"] {
        let spec = load_sweep_spec(&config(&format!("{name}.toml"))).unwrap();
        assert_eq!(spec, preset(name).unwrap(), "{name}");
    }
}

#[test]
fn shipped_params_are_the_defaults() {
    let text = std::fs::read_to_string(config("params.toml")).unwrap();
    let (params, q) = semgraph::cli::params_table(text.parse().unwrap()).unwrap();
    assert_eq!(params, semgraph::cost_model::SystemParams::default());
    assert_eq!(q.unwrap().ratios(), &[0.5, 0.5]);
}
