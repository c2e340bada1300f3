//! Experiment presets shipped with the binary, resolvable by name.

const PRESETS: [(&str, &str); 5] = [
    ("thm21", include_str!("../presets/thm21.json")),
    ("thm41", include_str!("../presets/thm41.json")),
    ("thm51", include_str!("../presets/thm51.json")),
    ("thm71", include_str!("../presets/thm71.json")),
    ("sweep-remark21", include_str!("../presets/sweep-remark21.json")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// Name and JSON text of a preset.
pub fn get(name: &str) -> Option<(&'static str, &'static str)> {
    PRESETS.iter().find(|p| p.0 == name).copied()
}
