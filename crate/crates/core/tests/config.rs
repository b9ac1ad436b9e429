use transmon_noise::config::{noise_preset, resolve_noise, DeviceConfig};
use transmon_noise::fit::{FitResult, ModelVariant};

#[test]
fn presets_reproduce_device_frequencies() {
    for (name, f, a) in [("quito", 5.0806, 0.3192), ("lima", 5.1277, 0.3183)] {
        let dev = DeviceConfig::preset(name).unwrap();
        let sp = dev.spectrum().unwrap();
        assert_eq!(sp.n_levels(), 4);
        assert!((sp.qubit_freq - f).abs() < 1e-4 * f);
        assert!((sp.anharmonicity.abs() - a).abs() < 1e-4 * a);
    }
    assert!(DeviceConfig::preset("casablanca").is_err());
}

#[test]
fn device_toml_round_trip_and_defaults() {
    let dev = DeviceConfig { n_levels: 3, ..DeviceConfig::preset("Lima").unwrap() };
    let text = dev.to_toml().unwrap();
    assert_eq!(DeviceConfig::from_toml(&text).unwrap(), dev);
    let minimal = DeviceConfig::from_toml("name = \"d\"\nqubit_frequency = 5.0\nanharmonicity = 0.3\n").unwrap();
    assert_eq!(minimal.n_levels, 4);
    assert_eq!(minimal.gates.gate_time, 70.0);
    assert!(DeviceConfig::from_toml("name = 3").is_err());
}

#[test]
fn noise_resolves_from_preset_parameter_file_or_report() {
    let quito = noise_preset("quito").unwrap();
    assert_eq!(quito.fluctuators.unwrap().gamma_max, 0.051);
    assert_eq!(resolve_noise("quito").unwrap(), quito);
    let dir = std::env::temp_dir().join(format!("noise-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let params = dir.join("noise.toml");
    std::fs::write(&params, toml::to_string(&noise_preset("lima").unwrap()).unwrap()).unwrap();
    assert_eq!(resolve_noise(params.to_str().unwrap()).unwrap(), noise_preset("lima").unwrap());
    let fit = FitResult { variant: ModelVariant::Full, parameters: quito.clone(), surfaces: vec![], minima: vec![] };
    fit.write_outputs(&dir).unwrap();
    assert_eq!(resolve_noise(dir.join("fit_report.toml").to_str().unwrap()).unwrap(), quito);
    std::fs::write(&params, "g_x = \"high\"").unwrap();
    assert!(resolve_noise(params.to_str().unwrap()).is_err());
    std::fs::remove_dir_all(dir).unwrap();
}
